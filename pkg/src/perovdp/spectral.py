"""Nonnegative matrices, sup-induced operator norms and certified spectral radii.

All matrix products go through :func:`matmul` / :func:`matvec`, which use
``np.einsum`` without BLAS dispatch so results do not depend on the number of
BLAS threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, PreconditionError

DEFAULT_TOL = 1e-8
GELFAND_SQUARINGS = 20
# the Collatz-Wielandt bracket keeps squaring past the Gelfand cap; defective
# matrices only close the bracket at rate 1/k
_MAX_CW_SQUARINGS = 64
_SUPPORT_CUTOFFS = (0.0, 1e-200, 1e-100, 1e-30, 1e-12)
_POSITIVE_FLOORS = (1e-300, 1e-200, 1e-100, 1e-30, 1e-12)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk->ik", a, b, optimize=False)


def matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ij,j->i", a, v, optimize=False)


def _square_finite(a, name="matrix") -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a nonempty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def as_nonnegative_matrix(b, name="B") -> np.ndarray:
    """Validate ``b`` as a square matrix with finite nonnegative entries."""
    arr = _square_finite(b, name)
    if np.any(arr < 0):
        raise InvalidInputError(f"{name} has negative entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MarkovChain:
    """Finite exogenous chain on states ``0..Z-1`` with row-stochastic ``P``."""

    P: np.ndarray

    def __post_init__(self):
        P = as_nonnegative_matrix(self.P, "P")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise InvalidInputError(f"rows of P must sum to 1, got {P.sum(axis=1)}")
        object.__setattr__(self, "P", P)

    @property
    def Z(self) -> int:
        return self.P.shape[0]


def operator_sup_norm(a) -> float:
    """Operator norm induced by the sup norm: the largest absolute row sum."""
    arr = _square_finite(a, "A")
    return float(np.abs(arr).sum(axis=1).max())


class UniformCheck(NamedTuple):
    holds: bool
    row_sums: np.ndarray


def check_uniform_condition(b) -> UniformCheck:
    """Row-sum condition ``B 1 << 1``, the classical sufficient test."""
    B = as_nonnegative_matrix(b)
    row_sums = B.sum(axis=1)
    return UniformCheck(bool(row_sums.max() < 1.0), row_sums)


@dataclass(frozen=True)
class SpectralCertificate:
    """Spectral radius estimate with Collatz-Wielandt bracket.

    ``test_vector`` is strictly positive with max entry 1 and satisfies
    ``B @ test_vector <= upper_bound * test_vector`` (up to rounding), so it
    defines a weighted max norm in which ``B`` has norm at most ``upper_bound``.
    """

    radius: float
    lower_bound: float
    upper_bound: float
    gelfand_trace: tuple
    row_sums: np.ndarray
    row_sum_condition_holds: bool
    test_vector: np.ndarray
    tol: float

    def verdict(self, band: float | None = None) -> str:
        """Return ``"contractive"``, ``"expansive"`` or ``"inconclusive"``.

        Radii within ``band`` of one (default: the certificate tolerance) are
        inconclusive; otherwise the bracket must lie strictly on one side.
        """
        band = self.tol if band is None else band
        if abs(self.radius - 1.0) <= band:
            return "inconclusive"
        if self.upper_bound < 1.0 and self.radius < 1.0:
            return "contractive"
        if self.lower_bound > 1.0 and self.radius > 1.0:
            return "expansive"
        return "inconclusive"

    @property
    def contractive(self) -> bool:
        return self.verdict() == "contractive"

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "gelfand_trace": [[k, val] for k, val in self.gelfand_trace],
            "row_sums": self.row_sums.tolist(),
            "row_sum_condition_holds": self.row_sum_condition_holds,
            "test_vector": self.test_vector.tolist(),
            "tol": self.tol,
        }


def _gelfand_trace(B: np.ndarray) -> list:
    # keep M = B^k / ||B^k|| and log ||B^k|| separately so nothing overflows
    norm = float(B.sum(axis=1).max())
    trace = []
    k = 1
    if norm == 0.0:
        return [(2**j, 0.0) for j in range(GELFAND_SQUARINGS + 1)]
    M = B / norm
    log_norm = math.log(norm)
    for j in range(GELFAND_SQUARINGS + 1):
        trace.append((k, math.exp(log_norm / k)))
        if j == GELFAND_SQUARINGS:
            break
        S = matmul(M, M)
        s = float(S.sum(axis=1).max())
        if s == 0.0:
            # nilpotent: every later power vanishes
            trace.extend((2 ** (i + 1), 0.0) for i in range(j, GELFAND_SQUARINGS))
            break
        if not math.isfinite(s):
            raise RuntimeError("non-finite value while squaring a renormalized matrix")
        M = S / s
        log_norm = 2.0 * log_norm + math.log(s)
        k *= 2
    return trace


def _cw_lower(B, v):
    best = -math.inf
    vmax = v.max()
    for cut in _SUPPORT_CUTOFFS:
        w = np.where(v > cut * vmax, v, 0.0)
        support = w > 0
        if not support.any():
            continue
        q = matvec(B, w)[support] / w[support]
        best = max(best, float(q.min()))
    return best


def _cw_upper(B, v):
    best, best_vec = math.inf, None
    vmax = v.max()
    for floor in _POSITIVE_FLOORS:
        w = np.maximum(v / vmax, floor)
        q = float((matvec(B, w) / w).max())
        if q < best:
            best, best_vec = q, w
    return best, best_vec


def _cw_bracket(B, A, d, tol, lower, upper, test_vector):
    """Tighten ``[lower, upper]`` with quotients of ``B`` at ``d * (I + A/||A||)^k 1``.

    ``A = D^-1 B D`` with ``D = diag(d)``; quotients are always taken on ``B``
    itself, so the bounds hold however ``d`` was chosen.
    """
    n = B.shape[0]
    C = A / A.sum(axis=1).max() + np.eye(n)
    v = np.ones(n)
    for _ in range(_MAX_CW_SQUARINGS + 1):
        u = d * v
        lo = _cw_lower(B, u)
        hi, vec = _cw_upper(B, u)
        if lo > lower:
            lower = lo
        if hi < upper:
            upper, test_vector = hi, vec
        if upper - lower <= tol:
            break
        v = matvec(C, v)
        v /= v.max()
        # next stage uses C^(2k): square C in place of k more products
        C = matmul(C, C)
        C /= C.sum(axis=1).max()
        if not np.all(np.isfinite(C)):
            raise RuntimeError("non-finite value while squaring a renormalized matrix")
    return lower, upper, test_vector


def _balance(B, sweeps: int = 200, limit: int = 500):
    """Power-of-two diagonal ``d`` roughly equalizing off-diagonal row and column sums of ``D^-1 B D``.

    Osborne sweeps with exponents kept in ``[-limit, limit]``; reducible
    matrices push towards the limit instead of diverging. Returns None when
    no rescaling happens.
    """
    n = B.shape[0]
    off = B * (1.0 - np.eye(n))
    e = np.zeros(n)
    with np.errstate(over="ignore", invalid="ignore"):
        e = _osborne(off, e, sweeps, limit)
    if not np.any(e):
        return None
    d = np.exp2(e - e.max())
    with np.errstate(over="ignore", invalid="ignore"):
        A = B * (d[None, :] / d[:, None])
    return d if np.all(np.isfinite(A)) else None


def _osborne(off, e, sweeps, limit):
    n = off.shape[0]
    for _ in range(sweeps):
        moved = False
        for i in range(n):
            r = float(np.sum(off[i] * np.exp2(e - e[i])))
            c = float(np.sum(off[:, i] * np.exp2(e[i] - e)))
            if r == 0.0 and c == 0.0:
                continue
            if c == 0.0:
                step = 8.0
            elif r == 0.0:
                step = -8.0
            elif math.isinf(r) and math.isinf(c):
                continue
            else:
                step = float(np.clip(np.round(0.5 * math.log2(r / c)), -8, 8))
            new = float(np.clip(e[i] + step, -limit, limit))
            if new != e[i]:
                e[i] = new
                moved = True
        if not moved:
            break
    return e


def spectral_radius(b, tol: float = DEFAULT_TOL) -> SpectralCertificate:
    """Certify the spectral radius of a nonnegative matrix.

    The Gelfand trace ``||B^k||^(1/k)`` for ``k = 1, 2, 4, ..., 2**20`` comes
    from renormalized repeated squaring. The bracket comes from
    Collatz-Wielandt quotients of ``B`` at iterates ``(I + B/||B||)^k 1``: the
    shift by the identity makes the iteration aperiodic without moving the
    Perron vector, so periodic and reducible matrices are handled. The bracket
    starts from the row sums (``v = 1``) and only ever tightens.
    """
    if not tol > 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")
    B = as_nonnegative_matrix(b)
    n = B.shape[0]
    row_sums = B.sum(axis=1)
    trace = tuple(_gelfand_trace(B))

    lower = float(row_sums.min())
    upper = float(row_sums.max())
    test_vector = np.ones(n)
    if upper > 0.0:
        lower, upper, test_vector = _cw_bracket(B, B, np.ones(n), tol, lower, upper, test_vector)
        if upper - lower > tol:
            # entries of very different magnitude get lost in I + B/||B||; retry on a balanced copy
            d = _balance(B)
            if d is not None:
                lower, upper, test_vector = _cw_bracket(B, B * (d[None, :] / d[:, None]), d, tol,
                                                        lower, upper, test_vector)

    if upper - lower <= 2.0 * tol:
        radius = 0.5 * (lower + upper)
    else:
        radius = min(max(trace[-1][1], lower), upper)
    if upper < lower:
        # rounding in the quotients; collapse to a consistent bracket
        lower = upper = radius
    return SpectralCertificate(
        radius=float(radius),
        lower_bound=float(min(lower, radius)),
        upper_bound=float(max(upper, radius)),
        gelfand_trace=trace,
        row_sums=row_sums,
        row_sum_condition_holds=bool(row_sums.max() < 1.0),
        test_vector=test_vector / test_vector.max(),
        tol=tol,
    )


def compare_conditions(b, band: float = 1e-6, tol: float = DEFAULT_TOL) -> dict:
    """Four-way comparison of the row-sum condition against ``rho(B) < 1``."""
    cert = spectral_radius(b, tol)
    uniform = check_uniform_condition(b)
    spectral = cert.verdict(band)
    if spectral == "inconclusive":
        verdict = "inconclusive"
    elif uniform.holds:
        verdict = "both pass"
    elif spectral == "contractive":
        verdict = "only spectral passes"
    else:
        verdict = "both fail"
    return {
        "row_sums": uniform.row_sums,
        "max_row_sum": float(uniform.row_sums.max()),
        "uniform_condition": uniform.holds,
        "spectral_condition": spectral,
        "certificate": cert,
        "verdict": verdict,
    }


def neumann_apply(b, c, tol: float = 1e-12, certificate: SpectralCertificate | None = None) -> np.ndarray:
    """Sum ``c + Bc + B^2 c + ...`` to within ``tol`` in the sup norm.

    Truncation is controlled through the certificate's test vector ``t``:
    in the norm ``max_i |x_i| / t_i`` the matrix has norm at most
    ``upper_bound < 1``, and since ``t <= 1`` that norm dominates the sup norm.
    """
    if not tol > 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")
    B = as_nonnegative_matrix(b)
    c = np.asarray(c, dtype=float)
    if c.shape != (B.shape[0],) or np.any(c < 0) or not np.all(np.isfinite(c)):
        raise InvalidInputError("c must be a finite nonnegative vector matching B")
    cert = certificate if certificate is not None else spectral_radius(B)
    lam = cert.upper_bound
    if cert.radius >= 1.0 or lam >= 1.0:
        raise PreconditionError(
            f"Neumann series needs a certified radius below 1 (radius={cert.radius}, upper={lam})"
        )
    t = cert.test_vector
    s = c.copy()
    term = c
    factor = lam / (1.0 - lam)
    for _ in range(10_000_000):
        if factor * float((term / t).max()) <= tol:
            return s
        term = matvec(B, term)
        s = s + term
    raise RuntimeError("Neumann series did not reach tolerance")
