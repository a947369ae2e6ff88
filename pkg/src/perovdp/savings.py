"""Optimal savings with possibly unbounded utility.

Wealth evolves as ``w' = R(z, z') (w - c) + y(z')`` with ``0 <= c <= w``.
Actions are consumption shares ``theta`` on a fixed grid, so ``c = theta * w``
and the feasible set scales with wealth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, PreconditionError
from .mdp import AdditiveMdp, _as_discount
from .spectral import (
    MarkovChain,
    SpectralCertificate,
    as_nonnegative_matrix,
    matvec,
    spectral_radius,
)
from .vmetric import WeightFunction, _check_grid, affine_weight, power_weight

INCONCLUSIVE_BAND = 1e-6
DIVERGENCE_HORIZON = 200


def wealth_grid(w_min: float = 1e-3, w_max: float = 1e3, n: int = 300) -> np.ndarray:
    """Geometrically spaced wealth grid."""
    if not 0 < w_min < w_max or n < 2:
        raise InvalidInputError("need 0 < w_min < w_max and n >= 2")
    return np.geomspace(w_min, w_max, n)


def share_grid(n: int = 101) -> np.ndarray:
    if n < 1:
        raise InvalidInputError("need at least one consumption share")
    return np.linspace(0.0, 1.0, n) if n > 1 else np.ones(1)


@dataclass(frozen=True)
class CRRA:
    """``u(c) = c**(1 - gamma) / (1 - gamma)`` with ``0 < gamma < 1``."""

    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError(f"CRRA needs 0 < gamma < 1, got {self.gamma}")

    def __call__(self, c):
        a = 1.0 - self.gamma
        return np.power(np.asarray(c, dtype=float), a) / a

    def describe(self) -> dict:
        return {"kind": "crra", "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class TabulatedUtility:
    """Increasing concave utility given by knots, starting at ``c = 0``.

    Piecewise linear between knots; past the last knot it continues with the
    last slope.
    """

    c: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        u = np.array(self.u, dtype=float)
        if c.ndim != 1 or c.shape != u.shape or c.size < 2:
            raise InvalidInputError("tabulated utility needs matching 1-d knots, at least two")
        if c[0] != 0.0:
            raise InvalidInputError("first utility knot must be c = 0 so that u(0) is finite")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(u))):
            raise InvalidInputError("utility knots must be finite")
        if np.any(np.diff(c) <= 0):
            raise InvalidInputError("utility knots must be strictly increasing in c")
        slopes = np.diff(u) / np.diff(c)
        if np.any(slopes < 0):
            raise InvalidInputError("utility must be increasing")
        if np.any(np.diff(slopes) > 1e-12 * max(1.0, float(np.abs(slopes).max()))):
            raise InvalidInputError("utility must be concave (slopes must not increase)")
        c.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "u", u)

    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        last_slope = (self.u[-1] - self.u[-2]) / (self.c[-1] - self.c[-2])
        inside = np.interp(c, self.c, self.u)
        return np.where(c > self.c[-1], self.u[-1] + last_slope * (c - self.c[-1]), inside)

    @property
    def slope_at_zero(self) -> float:
        return float((self.u[1] - self.u[0]) / (self.c[1] - self.c[0]))

    def describe(self) -> dict:
        return {"kind": "tabulated", "c": self.c.tolist(), "u": self.u.tolist()}


@dataclass(frozen=True, eq=False)
class SavingsParams:
    chain: MarkovChain
    R: np.ndarray
    y: np.ndarray
    discount: np.ndarray
    utility: CRRA | TabulatedUtility
    w_grid: np.ndarray = field(default_factory=wealth_grid)
    c_shares: np.ndarray = field(default_factory=share_grid)

    def __post_init__(self):
        Z = self.chain.Z
        R = np.array(self.R, dtype=float)
        if R.ndim == 0:
            R = np.full((Z, Z), float(R))
        elif R.ndim == 1 and R.shape == (Z,):
            # one return per current state
            R = np.repeat(R[:, None], Z, axis=1)
        if R.shape != (Z, Z) or not np.all(np.isfinite(R)) or np.any(R < 0):
            raise InvalidInputError(f"R must be a finite nonnegative {Z}x{Z} array")
        y = np.array(self.y, dtype=float)
        if y.ndim == 0:
            y = np.full(Z, float(y))
        if y.shape != (Z,) or not np.all(np.isfinite(y)) or np.any(y < 0):
            raise InvalidInputError(f"y must be a finite nonnegative vector of length {Z}")
        beta = _as_discount(self.discount, Z)
        if not isinstance(self.utility, (CRRA, TabulatedUtility)):
            raise InvalidInputError("utility must be CRRA or TabulatedUtility")
        w = _check_grid(self.w_grid)
        if w[0] <= 0:
            raise InvalidInputError("wealth grid must be strictly positive")
        s = np.array(self.c_shares, dtype=float)
        if s.ndim != 1 or s.size < 1 or np.any(s < 0) or np.any(s > 1) or np.any(np.diff(s) <= 0):
            raise InvalidInputError("consumption shares must be strictly increasing in [0, 1]")
        R.setflags(write=False)
        y.setflags(write=False)
        s.setflags(write=False)
        for name, val in (("R", R), ("y", y), ("discount", beta), ("w_grid", w), ("c_shares", s)):
            object.__setattr__(self, name, val)

    @property
    def Z(self) -> int:
        return self.chain.Z

    @property
    def gamma(self) -> float | None:
        return self.utility.gamma if isinstance(self.utility, CRRA) else None

    @property
    def zero_income(self) -> bool:
        return bool(np.all(self.y == 0))


def utility_normalization(p: SavingsParams) -> dict:
    """Shift applied to the reward (``u(0)``) and the slope bound at zero.

    The reward is ``u(c) - u(0) >= 0``. Rescaling by the slope would only
    change the units of the value function, so it is reported, not applied.
    """
    shift = float(p.utility(0.0))
    slope = p.utility.slope_at_zero if isinstance(p.utility, TabulatedUtility) else math.inf
    return {"shift": shift, "slope_at_zero": slope}


def build_savings_mdp(p: SavingsParams) -> AdditiveMdp:
    w = p.w_grid
    Z = p.Z
    nA = p.c_shares.size
    c = w[:, None, None] * p.c_shares[None, None, :]
    actions = np.broadcast_to(c, (w.size, Z, nA))
    reward = p.utility(actions) - p.utility(0.0)
    saved = w[:, None] * (1.0 - p.c_shares[None, :])  # exact zero at share 1
    next_x = (p.R[None, :, :, None] * saved[:, None, None, :]
              + p.y[None, None, :, None])
    return AdditiveMdp(w, p.chain, p.discount, actions, True, reward, next_x)


def savings_B_general(p: SavingsParams) -> np.ndarray:
    """``B(z, z') = P beta max(1, R)``."""
    return as_nonnegative_matrix(p.chain.P * p.discount * np.maximum(1.0, p.R))


def savings_B_crra(p: SavingsParams, gamma: float | None = None) -> np.ndarray:
    """Coefficient matrix for CRRA utility.

    ``P beta R**(1 - gamma)`` with zero income, ``P beta max(1, R**(1 - gamma))``
    otherwise.
    """
    gamma = p.gamma if gamma is None else gamma
    if gamma is None or not 0.0 < gamma < 1.0:
        raise InvalidInputError(f"CRRA coefficient matrix needs 0 < gamma < 1, got {gamma}")
    g = p.R ** (1.0 - gamma)
    if not p.zero_income:
        g = np.maximum(1.0, g)
    return as_nonnegative_matrix(p.chain.P * p.discount * g)


def offset_tilde_beta(p: SavingsParams, b: float, exponent: float = 1.0) -> np.ndarray:
    """Effective discounts for ``kappa = (w + b)**exponent``: ``beta (max(1, R) + y(z')/b)**exponent``."""
    return p.discount * (np.maximum(1.0, p.R) + p.y[None, :] / b) ** exponent


class WeightOffset(NamedTuple):
    offset: float
    weight: WeightFunction
    tilde_beta: np.ndarray
    certificate: SpectralCertificate


def choose_weight_offset(p: SavingsParams, target_margin: float = 0.01, exponent: float = 1.0,
                         max_doublings: int = 200) -> WeightOffset:
    """Pick ``b`` for ``kappa(w) = (w + b)**exponent`` by doubling from 1.

    The limit ``b -> inf`` of the effective discounts is the general
    coefficient matrix, so this succeeds whenever that matrix has radius below
    ``1 - target_margin``; the returned ``b`` gets within ``target_margin / 2``.
    """
    limit = as_nonnegative_matrix(p.chain.P * offset_tilde_beta(p, math.inf, exponent))
    limit_cert = spectral_radius(limit)
    if not limit_cert.upper_bound < 1.0 - target_margin:
        raise PreconditionError(
            f"cannot certify a weight offset: radius of P*beta*max(1,R)^{exponent:g} is "
            f"{limit_cert.radius:.12g}, need < {1.0 - target_margin:g}")
    b = 1.0
    for _ in range(max_doublings):
        tb = offset_tilde_beta(p, b, exponent)
        cert = spectral_radius(p.chain.P * tb)
        if cert.upper_bound < 1.0 - target_margin / 2.0:
            w = affine_weight(b) if exponent == 1.0 else power_weight(exponent, b)
            return WeightOffset(b, w, tb, cert)
        b *= 2.0
    raise RuntimeError("weight offset doubling did not terminate")


def solution_weight(p: SavingsParams, coefficient: str = "auto", target_margin: float = 0.01) -> WeightFunction:
    """Weight used to solve the model.

    CRRA with zero income: ``w**(1 - gamma)``. CRRA with income and the CRRA
    coefficient: ``(w + b)**(1 - gamma)``. Otherwise ``w + b``.
    """
    coefficient = _resolve_coefficient(p, coefficient)
    if coefficient == "crra":
        if p.zero_income:
            return power_weight(1.0 - p.gamma)
        return choose_weight_offset(p, target_margin, exponent=1.0 - p.gamma).weight
    return choose_weight_offset(p, target_margin).weight


def _resolve_coefficient(p, coefficient):
    if coefficient == "auto":
        return "crra" if p.gamma is not None else "general"
    if coefficient not in ("crra", "general"):
        raise InvalidInputError(f"coefficient must be auto, crra or general, got {coefficient!r}")
    if coefficient == "crra" and p.gamma is None:
        raise InvalidInputError("the CRRA coefficient matrix needs CRRA utility")
    return coefficient


def coefficient_matrix(p: SavingsParams, coefficient: str = "auto") -> np.ndarray:
    if _resolve_coefficient(p, coefficient) == "crra":
        return savings_B_crra(p)
    return savings_B_general(p)


def _share_objective_max(q: float, alpha: float, shares=None) -> float:
    """``max_theta theta**alpha + (1 - theta)**alpha * q`` over a share grid or [0, 1]."""
    if shares is not None:
        return float(np.max(shares**alpha + (1.0 - shares) ** alpha * q))
    if q <= 0.0:
        return 1.0
    grid = np.linspace(0.0, 1.0, 2001)
    vals = grid**alpha + (1.0 - grid) ** alpha * q
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    # concave objective: bisect on the sign of the derivative inside the bracket
    lo, hi = max(lo, 1e-300), min(hi, 1.0 - 1e-16)

    def slope(t):
        return t ** (alpha - 1.0) - (1.0 - t) ** (alpha - 1.0) * q

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16:
            break
    t = 0.5 * (lo + hi)
    return float(max(vals[k], t**alpha + (1.0 - t) ** alpha * q))


def crra_zero_income_oracle(p: SavingsParams, gamma: float | None = None, tol: float = 1e-12,
                            shares=None, max_iter: int = 1_000_000) -> np.ndarray:
    """Coefficients ``h`` with ``v(w, z) = h(z) w**(1-gamma) / (1-gamma)``.

    Solves ``h(z) = max_theta {theta**a + (1-theta)**a (B h)(z)}``, ``a = 1 - gamma``,
    by iteration from ``h = 1``. ``shares=None`` maximizes over the continuum
    (grid search refined by bisection); pass a share grid to reproduce a
    discretized model exactly.
    """
    gamma = p.gamma if gamma is None else gamma
    if not p.zero_income:
        raise PreconditionError("the homogeneity oracle needs zero non-financial income")
    B = savings_B_crra(p, gamma)
    cert = spectral_radius(B)
    if cert.verdict(INCONCLUSIVE_BAND) != "contractive":
        raise PreconditionError(f"oracle undefined: radius of B is {cert.radius:.12g}")
    alpha = 1.0 - gamma
    sh = None if shares is None else np.asarray(shares, dtype=float)
    h = np.ones(p.Z)
    for _ in range(max_iter):
        q = matvec(B, h)
        new = np.array([_share_objective_max(qz, alpha, sh) for qz in q])
        if np.abs(new - h).max() <= tol:
            return new
        h = new
    raise RuntimeError("oracle iteration did not converge")


def plan_coefficients(p: SavingsParams, T: int, gamma: float | None = None) -> np.ndarray:
    """``a_T = B^T 1`` for the save-then-consume-everything plan."""
    if T < 0:
        raise InvalidInputError(f"T must be nonnegative, got {T}")
    B = savings_B_crra(p, gamma)
    a = np.ones(p.Z)
    for _ in range(T):
        a = matvec(B, a)
    return a


def plan_value_vT(p: SavingsParams, T: int, w: float, z: int, gamma: float | None = None) -> float:
    """Lifetime utility of saving everything until ``T`` and then consuming all wealth."""
    gamma = p.gamma if gamma is None else gamma
    if not p.zero_income:
        raise PreconditionError("plan values are defined for zero non-financial income")
    if not w > 0:
        raise InvalidInputError("initial wealth must be positive")
    a = plan_coefficients(p, T, gamma)
    alpha = 1.0 - gamma
    return float(a[z] * w**alpha / alpha)


@dataclass
class Classification:
    verdict: str  # "Convergent" | "Divergent" | "Inconclusive"
    coefficient: str
    B: np.ndarray
    certificate: SpectralCertificate
    growth_exponent: np.ndarray | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "coefficient": self.coefficient,
            "B": self.B.tolist(),
            "certificate": self.certificate.to_dict(),
            "growth_exponent": None if self.growth_exponent is None else self.growth_exponent.tolist(),
            "horizon": DIVERGENCE_HORIZON,
            "reason": self.reason,
        }


def growth_exponent(p: SavingsParams, T: int = DIVERGENCE_HORIZON, gamma: float | None = None) -> np.ndarray:
    """``v_T(1, z) ** (1 / T)`` for every ``z``."""
    gamma = p.gamma if gamma is None else gamma
    return np.array([plan_value_vT(p, T, 1.0, z, gamma) ** (1.0 / T) for z in range(p.Z)])


def classify_problem(p: SavingsParams, gamma: float | None = None, coefficient: str = "auto",
                     band: float = INCONCLUSIVE_BAND) -> Classification:
    """Decide between a unique weighted-bounded solution and infinite value.

    ``rho(B) < 1`` is sufficient in every case. Divergence (``rho(B) > 1``)
    only implies infinite value for CRRA utility with zero income; elsewhere
    a failed condition is reported as inconclusive.
    """
    if gamma is not None and p.gamma is None:
        p = SavingsParams(p.chain, p.R, p.y, p.discount, CRRA(gamma), p.w_grid, p.c_shares)
    coef = _resolve_coefficient(p, "crra" if gamma is not None else coefficient)
    B = savings_B_crra(p, gamma) if coef == "crra" else savings_B_general(p)
    cert = spectral_radius(B)
    side = cert.verdict(band)
    if side == "contractive":
        return Classification("Convergent", coef, B, cert)
    if side == "inconclusive":
        return Classification("Inconclusive", coef, B, cert,
                              reason=f"radius {cert.radius:.12g} within {band:g} of 1")
    if coef == "crra" and p.zero_income:
        return Classification("Divergent", coef, B, cert, growth_exponent(p, gamma=p.gamma),
                              reason="radius above 1 with CRRA utility and zero income")
    return Classification("Inconclusive", coef, B, cert,
                          reason="sufficient condition fails; divergence is only established "
                                 "for CRRA utility with zero income")
