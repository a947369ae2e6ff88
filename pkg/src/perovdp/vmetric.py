"""Value functions on a grid and the vector-valued weighted sup metric.

Distances are vectors with one component per exogenous state; the sup over
the endogenous state is a max over grid points, which is exact for the
piecewise-linear functions the solver works with.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError


def _check_grid(x_grid) -> np.ndarray:
    x = np.array(x_grid, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise InvalidInputError("grid must be a nonempty 1-d array")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("grid has non-finite points")
    if np.any(np.diff(x) <= 0):
        raise InvalidInputError("grid must be strictly increasing")
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Values on ``x_grid x {0..Z-1}``, stored as an ``(len(x_grid), Z)`` array.

    Off-grid evaluation is linear in ``x`` with constant extrapolation past
    either end of the grid. Instances are immutable.
    """

    x_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = _check_grid(self.x_grid)
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != x.size:
            raise InvalidInputError(
                f"values must have shape ({x.size}, Z), got {np.shape(self.values)}"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("value functions must be finite on the grid")
        vals.setflags(write=False)
        object.__setattr__(self, "x_grid", x)
        object.__setattr__(self, "values", vals)

    @property
    def Z(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, x_grid, Z: int, value: float = 0.0) -> "ValueFunction":
        return cls(x_grid, np.full((len(x_grid), Z), float(value)))

    def __call__(self, x, z: int):
        return np.interp(x, self.x_grid, self.values[:, z])

    def with_values(self, values) -> "ValueFunction":
        return ValueFunction(self.x_grid, values)


class WeightFunction:
    """Positive weight ``kappa(x, z)``.

    ``fn`` must accept an array of endogenous states and an exogenous index
    (scalar or broadcastable array) and return an array of the broadcast shape.
    Values only need to be positive on the grid; off-grid points (for instance
    zero wealth) may map to zero.
    """

    def __init__(self, fn: Callable, name: str = "custom", params: dict | None = None,
                 ratio_monotone: bool = True):
        self.fn = fn
        self.name = name
        self.params = dict(params or {})
        # grid sups of kappa(g(x))/kappa(x) equal continuum sups only when the
        # ratio is monotone in x; shipped families declare this, custom ones must
        self.ratio_monotone = ratio_monotone

    def __call__(self, x, z):
        return np.asarray(self.fn(np.asarray(x, dtype=float), z), dtype=float)

    def on_grid(self, x_grid, Z: int) -> np.ndarray:
        x = np.asarray(x_grid, dtype=float)
        out = self(x[:, None], np.arange(Z)[None, :])
        out = np.broadcast_to(out, (x.size, Z)).astype(float)
        if not np.all(np.isfinite(out)) or np.any(out <= 0):
            raise InvalidInputError(f"weight '{self.name}' must be finite and positive on the grid")
        return out

    def describe(self) -> dict:
        return {"kind": self.name, **self.params}

    def __repr__(self):
        return f"WeightFunction({self.name!r}, {self.params})"


def unit_weight() -> WeightFunction:
    return WeightFunction(lambda x, z: np.ones(np.broadcast(x, z).shape), "unit")


def affine_weight(offset: float) -> WeightFunction:
    """``kappa(x, z) = x + offset``."""
    if not offset > 0:
        raise InvalidInputError(f"offset must be positive, got {offset}")
    return WeightFunction(lambda x, z: np.broadcast_to(x + offset, np.broadcast(x, z).shape),
                          "affine", {"offset": float(offset)})


def power_weight(exponent: float, offset: float = 0.0) -> WeightFunction:
    """``kappa(x, z) = (x + offset) ** exponent``, clipped at zero below ``-offset``."""
    if offset < 0:
        raise InvalidInputError(f"offset must be nonnegative, got {offset}")

    def fn(x, z):
        return np.broadcast_to(np.maximum(x + offset, 0.0) ** exponent, np.broadcast(x, z).shape)

    return WeightFunction(fn, "power", {"exponent": float(exponent), "offset": float(offset)})


def _grid_values(v) -> tuple:
    if isinstance(v, ValueFunction):
        return v.x_grid, v.values
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return None, arr


def vector_distance(v1, v2, kappa: WeightFunction | None = None) -> np.ndarray:
    """Per-exogenous-state distance ``d_z = max_x |v1 - v2| / kappa``.

    ``kappa=None`` is the unit weight. Raw ``(nx, Z)`` arrays are accepted in
    place of value functions.
    """
    g1, a1 = _grid_values(v1)
    g2, a2 = _grid_values(v2)
    if a1.shape != a2.shape:
        raise InvalidInputError(f"shape mismatch {a1.shape} vs {a2.shape}")
    if g1 is not None and g2 is not None and not np.array_equal(g1, g2):
        raise InvalidInputError("value functions live on different grids")
    if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(a2))):
        raise InvalidInputError("distances between non-finite values are undefined")
    diff = np.abs(a1 - a2)
    if kappa is not None:
        grid = g1 if g1 is not None else g2
        if grid is None:
            raise InvalidInputError("a weighted distance needs the grid; pass ValueFunction objects")
        diff = diff / kappa.on_grid(grid, a1.shape[1])
    return diff.max(axis=0)


def sup_collapse(d) -> float:
    """Scalar metric ``max_z d_z``."""
    d = np.asarray(d, dtype=float)
    return float(d.max()) if d.size else 0.0


def weighted_norm(v: ValueFunction, kappa: WeightFunction) -> float:
    return float((np.abs(v.values) / kappa.on_grid(v.x_grid, v.Z)).max())
