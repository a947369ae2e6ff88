"""Perov-contraction value iteration for unbounded Markov dynamic programs."""

from .errors import (
    ConfigError,
    InvalidInputError,
    ModelError,
    PerovError,
    PreconditionError,
    SpectralConditionError,
)
from .mdp import (
    AdditiveMdp,
    PerovSolution,
    SolveReport,
    bellman_apply,
    build_B,
    compute_tilde_beta,
    extract_policy,
    perov_solve,
    scaled_bellman_apply,
    verify_blackwell,
    verify_perov_inequality,
)
from .savings import (
    CRRA,
    SavingsParams,
    TabulatedUtility,
    build_savings_mdp,
    choose_weight_offset,
    classify_problem,
    crra_zero_income_oracle,
    plan_value_vT,
    savings_B_crra,
    savings_B_general,
    solution_weight,
)
from .spectral import (
    MarkovChain,
    SpectralCertificate,
    check_uniform_condition,
    compare_conditions,
    neumann_apply,
    operator_sup_norm,
    spectral_radius,
)
from .vmetric import (
    ValueFunction,
    WeightFunction,
    affine_weight,
    power_weight,
    sup_collapse,
    unit_weight,
    vector_distance,
    weighted_norm,
)

__version__ = "0.1.0"
