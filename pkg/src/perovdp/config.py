"""TOML model configuration.

Three model kinds are understood: ``savings`` (the optimal savings problem),
``abstract-mdp`` (a fully tabulated additive program) and ``matrix`` (a bare
coefficient matrix, for the ``spectral`` and ``compare-conditions`` verbs).
See ``configs/README.md`` for the schema.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, PerovError
from .mdp import AdditiveMdp
from .savings import CRRA, SavingsParams, TabulatedUtility, share_grid, wealth_grid
from .spectral import DEFAULT_TOL, MarkovChain, as_nonnegative_matrix
from .vmetric import WeightFunction, affine_weight, power_weight, unit_weight

CONFIG_SCHEMA = "perovdp.config/v1"

_ALLOWED = {
    "": {"schema", "model", "chain", "matrix", "savings", "mdp", "grid", "weight", "solver", "oracle", "spectral"},
    "model": {"kind", "name", "description"},
    "chain": {"P"},
    "matrix": {"B"},
    "savings": {"R", "y", "discount", "coefficient", "utility"},
    "savings.utility": {"kind", "gamma", "c", "u"},
    "mdp": {"x_grid", "discount", "actions", "feasible", "reward", "next_x"},
    "grid": {"w_min", "w_max", "n_w", "n_shares", "w", "shares"},
    "weight": {"kind", "offset", "exponent"},
    "solver": {"tol", "max_iter", "initial", "target_margin", "checks"},
    "oracle": {"enabled"},
    "spectral": {"tol", "band"},
}


@dataclass
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 10_000
    initial: str | float = "zero"
    target_margin: float = 0.01
    checks: int = 20


@dataclass
class ModelConfig:
    kind: str
    name: str
    source: str
    raw: dict
    matrix: np.ndarray | None = None
    params: SavingsParams | None = None
    mdp: AdditiveMdp | None = None
    coefficient: str = "auto"
    weight_table: dict | None = None
    solver: SolverSettings = field(default_factory=SolverSettings)
    oracle_enabled: bool = False
    spectral_tol: float = DEFAULT_TOL
    band: float = 1e-6

    def weight(self) -> WeightFunction | None:
        return build_weight(self.weight_table) if self.weight_table else None


class _Reader:
    def __init__(self, source, data):
        self.source = source
        self.data = data

    def fail(self, field_name, msg):
        raise ConfigError(f"{self.source}: field '{field_name}': {msg}")

    def table(self, name, required=False) -> dict:
        node = self.data
        for part in name.split(".") if name else []:
            if not isinstance(node, dict) or part not in node:
                if required:
                    raise ConfigError(f"{self.source}: missing table [{name}]")
                return {}
            node = node[part]
        if not isinstance(node, dict):
            self.fail(name, "expected a table")
        extra = set(node) - _ALLOWED.get(name, set(node))
        if extra:
            self.fail(f"{name}.{sorted(extra)[0]}".lstrip("."), "unknown key")
        return node

    def get(self, tbl, key, default=..., kind=None):
        name = f"{tbl}.{key}"
        node = self.table(tbl)
        if key not in node:
            if default is ...:
                self.fail(name, "required")
            return default
        val = node[key]
        if kind == "number":
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                self.fail(name, f"expected a number, got {val!r}")
            return float(val)
        if kind == "int":
            if isinstance(val, bool) or not isinstance(val, int):
                self.fail(name, f"expected an integer, got {val!r}")
            return val
        if kind == "str":
            if not isinstance(val, str):
                self.fail(name, f"expected a string, got {val!r}")
            return val
        if kind == "bool":
            if not isinstance(val, bool):
                self.fail(name, f"expected true/false, got {val!r}")
            return val
        if kind == "array":
            try:
                arr = np.array(val, dtype=float)
            except (TypeError, ValueError):
                self.fail(name, "expected a (nested) numeric array with regular shape")
            return arr
        return val


def build_weight(table: dict) -> WeightFunction:
    kind = table.get("kind", "unit")
    if kind == "unit":
        return unit_weight()
    if kind == "affine":
        return affine_weight(float(table.get("offset", 1.0)))
    if kind == "power":
        return power_weight(float(table["exponent"]), float(table.get("offset", 0.0)))
    raise ConfigError(f"unknown weight kind {kind!r}")


def load_config(path) -> ModelConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<config>") -> ModelConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: TOML syntax error: {exc}") from exc
    rd = _Reader(source, data)
    rd.table("")
    schema = data.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        rd.fail("schema", f"unsupported schema {schema!r}, expected {CONFIG_SCHEMA!r}")
    rd.table("model", required=True)
    kind = rd.get("model", "kind", kind="str")
    name = rd.get("model", "name", Path(source).stem, kind="str")
    cfg = ModelConfig(kind=kind, name=name, source=source, raw=data)

    try:
        _parse_common(rd, cfg)
        if kind == "matrix":
            rd.table("matrix", required=True)
            cfg.matrix = _wrap(rd, "matrix.B", lambda: as_nonnegative_matrix(rd.get("matrix", "B", kind="array")))
        elif kind == "savings":
            cfg.params = _parse_savings(rd, cfg)
        elif kind == "abstract-mdp":
            cfg.mdp = _parse_mdp(rd)
        else:
            rd.fail("model.kind", f"expected one of savings, abstract-mdp, matrix; got {kind!r}")
    except ConfigError:
        raise
    except PerovError as exc:
        raise ConfigError(f"{source}: invalid model: {exc}") from exc
    return cfg


def _wrap(rd, field_name, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (PerovError, ValueError) as exc:
        rd.fail(field_name, str(exc))


def _parse_common(rd, cfg):
    s = cfg.solver
    s.tol = rd.get("solver", "tol", s.tol, kind="number")
    s.max_iter = rd.get("solver", "max_iter", s.max_iter, kind="int")
    initial = rd.get("solver", "initial", "zero")
    if isinstance(initial, str):
        if initial not in ("zero", "random"):
            rd.fail("solver.initial", "expected 'zero', 'random' or a number")
    elif isinstance(initial, bool) or not isinstance(initial, (int, float)):
        rd.fail("solver.initial", "expected 'zero', 'random' or a number")
    else:
        initial = float(initial)
    s.initial = initial
    s.target_margin = rd.get("solver", "target_margin", s.target_margin, kind="number")
    s.checks = rd.get("solver", "checks", s.checks, kind="int")
    if not s.tol > 0:
        rd.fail("solver.tol", "must be positive")
    if s.max_iter < 0:
        rd.fail("solver.max_iter", "must be nonnegative")
    if not 0 < s.target_margin < 1:
        rd.fail("solver.target_margin", "must lie in (0, 1)")
    cfg.oracle_enabled = rd.get("oracle", "enabled", False, kind="bool")
    cfg.spectral_tol = rd.get("spectral", "tol", DEFAULT_TOL, kind="number")
    cfg.band = rd.get("spectral", "band", 1e-6, kind="number")
    if not cfg.spectral_tol > 0:
        rd.fail("spectral.tol", "must be positive")
    wt = rd.table("weight")
    if wt:
        kind = rd.get("weight", "kind", kind="str")
        table = {"kind": kind}
        if kind == "affine":
            table["offset"] = rd.get("weight", "offset", 1.0, kind="number")
        elif kind == "power":
            table["exponent"] = rd.get("weight", "exponent", kind="number")
            table["offset"] = rd.get("weight", "offset", 0.0, kind="number")
        elif kind != "unit":
            rd.fail("weight.kind", f"expected unit, affine or power; got {kind!r}")
        _wrap(rd, "weight", lambda: build_weight(table))
        cfg.weight_table = table


def _chain(rd):
    rd.table("chain", required=True)
    return _wrap(rd, "chain.P", lambda: MarkovChain(rd.get("chain", "P", kind="array")))


def _parse_savings(rd, cfg) -> SavingsParams:
    chain = _chain(rd)
    rd.table("savings", required=True)
    R = rd.get("savings", "R", kind="array")
    y = rd.get("savings", "y", 0.0, kind="array")
    discount = rd.get("savings", "discount", kind="array")
    cfg.coefficient = rd.get("savings", "coefficient", "auto", kind="str")
    if cfg.coefficient not in ("auto", "general", "crra"):
        rd.fail("savings.coefficient", "expected auto, general or crra")
    rd.table("savings.utility", required=True)
    ukind = rd.get("savings.utility", "kind", kind="str")
    if ukind == "crra":
        gamma = rd.get("savings.utility", "gamma", kind="number")
        utility = _wrap(rd, "savings.utility.gamma", lambda: CRRA(gamma))
    elif ukind == "tabulated":
        c = rd.get("savings.utility", "c", kind="array")
        u = rd.get("savings.utility", "u", kind="array")
        utility = _wrap(rd, "savings.utility", lambda: TabulatedUtility(c, u))
    else:
        rd.fail("savings.utility.kind", f"expected crra or tabulated; got {ukind!r}")

    if "w" in rd.table("grid"):
        w = rd.get("grid", "w", kind="array")
    else:
        w = _wrap(rd, "grid", lambda: wealth_grid(rd.get("grid", "w_min", 1e-3, kind="number"),
                                                  rd.get("grid", "w_max", 1e3, kind="number"),
                                                  rd.get("grid", "n_w", 300, kind="int")))
    if "shares" in rd.table("grid"):
        shares = rd.get("grid", "shares", kind="array")
    else:
        shares = _wrap(rd, "grid.n_shares", lambda: share_grid(rd.get("grid", "n_shares", 101, kind="int")))
    params = _wrap(rd, "savings", lambda: SavingsParams(chain, R, y, discount, utility, w, shares))
    if cfg.coefficient == "crra" and params.gamma is None:
        rd.fail("savings.coefficient", "'crra' needs CRRA utility")
    return params


def _parse_mdp(rd) -> AdditiveMdp:
    chain = _chain(rd)
    rd.table("mdp", required=True)
    x = rd.get("mdp", "x_grid", kind="array")
    discount = rd.get("mdp", "discount", kind="array")
    actions = rd.get("mdp", "actions", kind="array")
    reward = rd.get("mdp", "reward", kind="array")
    next_x = rd.get("mdp", "next_x", kind="array")
    feasible = rd.get("mdp", "feasible", True)
    feasible = np.array(feasible, dtype=bool)
    return _wrap(rd, "mdp", lambda: AdditiveMdp(x, chain, discount, actions, feasible, reward, next_x))
