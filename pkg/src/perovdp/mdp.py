"""Additive Markov dynamic programs on a grid and the Perov fixed-point solver.

A model is tabulated once: for every grid point ``x_i``, exogenous state ``z``
and action slot ``j`` we store the action, the reward and the next endogenous
state for each successor ``z'``. Action sets may differ in size across
``(x, z)``; shorter ones are padded and masked out through ``feasible``.

Off-grid values are read by linear interpolation with constant extrapolation.
When an operator carries a weight ``kappa`` the interpolation happens in
``v / kappa`` coordinates, i.e. ``v(x') = kappa(x') * interp(v / kappa)(x')``,
which keeps the unscaled and scaled Bellman operators exactly conjugate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidInputError, ModelError, SpectralConditionError
from .spectral import (
    DEFAULT_TOL,
    MarkovChain,
    SpectralCertificate,
    as_nonnegative_matrix,
    matvec,
    neumann_apply,
    spectral_radius,
)
from .vmetric import ValueFunction, WeightFunction, _check_grid, unit_weight

log = logging.getLogger(__name__)


def _as_discount(discount, Z):
    beta = np.array(discount, dtype=float)
    if beta.ndim == 0:
        beta = np.full((Z, Z), float(beta))
    if beta.shape != (Z, Z):
        raise InvalidInputError(f"discount must be scalar or {Z}x{Z}, got shape {beta.shape}")
    if not np.all(np.isfinite(beta)) or np.any(beta < 0):
        raise InvalidInputError("discount factors must be finite and nonnegative")
    beta.setflags(write=False)
    return beta


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AdditiveMdp:
    """Tabulated additive Markov dynamic program.

    Array shapes (``nx`` grid points, ``Z`` states, ``nA`` action slots):

    - ``actions``, ``feasible``, ``reward``: ``(nx, Z, nA)``
    - ``next_x``: ``(nx, Z, Z, nA)``, indexed ``[i, z, z', j]``
    """

    x_grid: np.ndarray
    chain: MarkovChain
    discount: np.ndarray
    actions: np.ndarray
    feasible: np.ndarray
    reward: np.ndarray
    next_x: np.ndarray

    def __post_init__(self):
        x = _check_grid(self.x_grid)
        Z = self.chain.Z
        beta = _as_discount(self.discount, Z)
        actions = np.array(self.actions, dtype=float)
        if actions.ndim != 3 or actions.shape[:2] != (x.size, Z):
            raise InvalidInputError(f"actions must have shape ({x.size}, {Z}, nA), got {actions.shape}")
        nA = actions.shape[2]
        feasible = np.broadcast_to(np.asarray(self.feasible, dtype=bool), actions.shape).copy()
        reward = np.array(self.reward, dtype=float)
        next_x = np.array(self.next_x, dtype=float)
        if reward.shape != actions.shape:
            raise InvalidInputError(f"reward must have shape {actions.shape}, got {reward.shape}")
        if next_x.shape != (x.size, Z, Z, nA):
            raise InvalidInputError(f"next_x must have shape {(x.size, Z, Z, nA)}, got {next_x.shape}")

        empty = ~feasible.any(axis=2)
        if empty.any():
            i, z = np.argwhere(empty)[0]
            raise ModelError(f"empty action set at x={x[i]!r}, z={z}")
        bad = feasible & ~np.isfinite(reward)
        if bad.any():
            i, z, j = np.argwhere(bad)[0]
            raise ModelError(f"non-finite reward at x={x[i]!r}, z={z}, action={actions[i, z, j]!r}")
        bad = feasible[:, :, None, :] & ~np.isfinite(next_x)
        if bad.any():
            i, z, zp, j = np.argwhere(bad)[0]
            raise ModelError(f"non-finite transition at x={x[i]!r}, z={z}, z'={zp}")
        reward = np.where(feasible, reward, 0.0)
        next_x = np.where(feasible[:, :, None, :], next_x, x[0])

        for name, val in (("x_grid", x), ("discount", beta), ("actions", _frozen(actions)),
                          ("feasible", _frozen(feasible, bool)), ("reward", _frozen(reward)),
                          ("next_x", _frozen(next_x))):
            object.__setattr__(self, name, val)

        mask = feasible[:, :, None, :]
        clamp = int((mask & (next_x > x[-1])).sum())
        below = int((mask & (next_x < x[0])).sum())
        object.__setattr__(self, "clamp_count", clamp)
        object.__setattr__(self, "extrapolation_count", below)
        if clamp:
            log.warning("%d feasible transitions land above the grid maximum %g and are clamped", clamp, x[-1])
        if below:
            log.info("%d feasible transitions land below the grid minimum %g", below, x[0])

        xc = np.clip(next_x, x[0], x[-1])
        if x.size == 1:
            lo = np.zeros(xc.shape, dtype=np.intp)
            hi = lo
            frac = np.zeros(xc.shape)
        else:
            lo = np.clip(np.searchsorted(x, xc, side="right") - 1, 0, x.size - 2)
            hi = lo + 1
            frac = (xc - x[lo]) / (x[hi] - x[lo])
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        object.__setattr__(self, "_frac", frac)

    @property
    def Z(self) -> int:
        return self.chain.Z

    @property
    def nx(self) -> int:
        return self.x_grid.size

    @classmethod
    def from_functions(cls, x_grid, chain: MarkovChain, discount,
                       feasible: Callable, reward: Callable, transition: Callable) -> "AdditiveMdp":
        """Tabulate a model given as functions.

        ``feasible(x, z)`` returns a 1-d array of actions; ``reward(x, z, a)``
        and ``transition(x, z, z_next, a)`` must accept that array as ``a``.
        """
        x = _check_grid(x_grid)
        Z = chain.Z
        sets = [[np.atleast_1d(np.asarray(feasible(xi, z), dtype=float)) for z in range(Z)] for xi in x]
        nA = max(s.size for row in sets for s in row)
        actions = np.zeros((x.size, Z, nA))
        mask = np.zeros((x.size, Z, nA), dtype=bool)
        rew = np.zeros((x.size, Z, nA))
        nxt = np.zeros((x.size, Z, Z, nA))
        for i, xi in enumerate(x):
            for z in range(Z):
                a = sets[i][z]
                if a.size == 0:
                    raise ModelError(f"empty action set at x={xi!r}, z={z}")
                k = a.size
                actions[i, z, :k] = a
                mask[i, z, :k] = True
                rew[i, z, :k] = reward(xi, z, a)
                for zp in range(Z):
                    nxt[i, z, zp, :k] = transition(xi, z, zp, a)
        return cls(x, chain, discount, actions, mask, rew, nxt)


class _Kernel:
    """Vectorized Bellman step for one (model, weight) pair.

    ``scaled=True`` gives the scaled operator acting on ``v / kappa``;
    ``scaled=False`` gives the unscaled operator whose continuation values are
    read through the weight (its input is still ``v / kappa``).
    """

    def __init__(self, mdp: AdditiveMdp, weight: WeightFunction | None, scaled: bool = True):
        self.mdp = mdp
        Z = mdp.Z
        pb = mdp.chain.P * mdp.discount
        mask = mdp.feasible
        if weight is None:
            self.K = np.ones((mdp.nx, Z))
            coef = np.broadcast_to(pb[None, :, :, None], mdp.next_x.shape).copy()
            reward = mdp.reward.copy()
        else:
            self.K = weight.on_grid(mdp.x_grid, Z)
            knext = np.empty(mdp.next_x.shape)
            for zp in range(Z):
                knext[:, :, zp, :] = weight(mdp.next_x[:, :, zp, :], zp)
            live = mask[:, :, None, :] & (pb[None, :, :, None] > 0)
            if np.any(live & (~np.isfinite(knext) | (knext < 0))):
                raise ModelError(f"weight '{weight.name}' is negative or non-finite at a reachable state")
            knext = np.where(mask[:, :, None, :], knext, 0.0)
            if scaled:
                coef = pb[None, :, :, None] * (knext / self.K[:, :, None, None])
                reward = mdp.reward / self.K[:, :, None]
            else:
                coef = pb[None, :, :, None] * knext
                reward = mdp.reward.copy()
        coef[~np.broadcast_to(mask[:, :, None, :], coef.shape)] = 0.0
        if not np.all(np.isfinite(reward[mask])):
            raise ModelError("reward / weight is unbounded on the grid")
        reward[~mask] = -np.inf
        self.coef = coef
        self.reward = reward

    def q(self, vals: np.ndarray) -> np.ndarray:
        m = self.mdp
        q = self.reward.copy()
        # fixed summation order over z' keeps results independent of threading
        for zp in range(m.Z):
            col = vals[:, zp]
            lo, hi, f = m._lo[:, :, zp, :], m._hi[:, :, zp, :], m._frac[:, :, zp, :]
            q += self.coef[:, :, zp, :] * ((1.0 - f) * col[lo] + f * col[hi])
        return q

    def apply(self, vals: np.ndarray):
        q = self.q(vals)
        idx = np.argmax(q, axis=2)  # first maximizer: smallest action index
        return np.take_along_axis(q, idx[:, :, None], axis=2)[:, :, 0], idx


def _check_same_grid(mdp, v):
    if v.values.shape != (mdp.nx, mdp.Z) or not np.array_equal(v.x_grid, mdp.x_grid):
        raise InvalidInputError("value function grid does not match the model grid")


def bellman_apply(mdp: AdditiveMdp, v: ValueFunction, weight: WeightFunction | None = None) -> ValueFunction:
    """One application of the Bellman operator ``T`` at every grid point.

    With ``weight`` given, off-grid continuation values are read as
    ``kappa * interp(v / kappa)``; without it, ``v`` is interpolated directly.
    """
    _check_same_grid(mdp, v)
    kern = _Kernel(mdp, weight, scaled=weight is None)
    out, _ = kern.apply(v.values / kern.K)
    return v.with_values(out)


def scaled_bellman_apply(mdp: AdditiveMdp, weight: WeightFunction | None, v_scaled: ValueFunction) -> ValueFunction:
    """One application of the scaled operator acting on ``v / kappa``."""
    _check_same_grid(mdp, v_scaled)
    out, _ = _Kernel(mdp, weight).apply(v_scaled.values)
    return v_scaled.with_values(out)


def extract_policy(mdp: AdditiveMdp, v: ValueFunction, weight: WeightFunction | None = None) -> np.ndarray:
    """Greedy action at every grid point, ties broken towards the smallest index.

    Returns an ``(nx, Z)`` array of actions.
    """
    _check_same_grid(mdp, v)
    kern = _Kernel(mdp, weight, scaled=weight is None)
    _, idx = kern.apply(v.values / kern.K)
    return np.take_along_axis(mdp.actions, idx[:, :, None], axis=2)[:, :, 0]


def compute_tilde_beta(mdp: AdditiveMdp, weight: WeightFunction | None) -> np.ndarray:
    """Effective discounts ``beta(z,z') * max kappa(x', z') / kappa(x, z)``.

    The max runs over grid points and feasible actions, so it is exactly the
    worst case the discretized operator can meet.
    """
    if weight is None:
        ratio_max = np.ones((mdp.Z, mdp.Z))
    else:
        K = weight.on_grid(mdp.x_grid, mdp.Z)
        ratio_max = np.zeros((mdp.Z, mdp.Z))
        for zp in range(mdp.Z):
            r = weight(mdp.next_x[:, :, zp, :], zp) / K[:, :, None]
            r = np.where(mdp.feasible, r, 0.0)
            ratio_max[:, zp] = r.max(axis=(0, 2))
    out = np.where(mdp.discount > 0, mdp.discount * ratio_max, 0.0)
    if not np.all(np.isfinite(out)):
        raise ModelError("weight ratio is unbounded on the grid")
    return out


def build_B(chain: MarkovChain, tilde_beta) -> np.ndarray:
    """Coefficient matrix ``B(z, z') = P(z, z') * tilde_beta(z, z')``."""
    tb = np.asarray(tilde_beta, dtype=float)
    if tb.shape != chain.P.shape:
        raise InvalidInputError(f"tilde_beta shape {tb.shape} does not match P {chain.P.shape}")
    return as_nonnegative_matrix(chain.P * tb)


class BlackwellReport(NamedTuple):
    monotonicity_violation: float
    discounting_violation: float
    samples: int


class PerovReport(NamedTuple):
    max_excess: float
    violations: int
    samples: int


def _coefficients(mdp, weight, B):
    if B is None:
        B = build_B(mdp.chain, compute_tilde_beta(mdp, weight))
    return as_nonnegative_matrix(B)


def verify_blackwell(mdp: AdditiveMdp, weight: WeightFunction | None = None, sample_count: int = 100,
                     rng_seed: int = 0, B=None, scale: float = 10.0) -> BlackwellReport:
    """Spot-check monotonicity and discounting of the scaled operator.

    Draws ``u <= v`` and ``c >= 0`` and reports the worst values of
    ``max(Tu - Tv)`` and ``max(T(u + c) - Tu - Bc)`` (clipped at zero).
    """
    B = _coefficients(mdp, weight, B)
    kern = _Kernel(mdp, weight)
    rng = np.random.default_rng(rng_seed)
    shape = (mdp.nx, mdp.Z)
    mono = disc = 0.0
    for _ in range(sample_count):
        u = rng.normal(scale=scale, size=shape)
        v = u + np.abs(rng.normal(scale=scale, size=shape))
        c = rng.uniform(0.0, scale, size=mdp.Z)
        tu, _ = kern.apply(u)
        tv, _ = kern.apply(v)
        tuc, _ = kern.apply(u + c[None, :])
        mono = max(mono, float((tu - tv).max()))
        disc = max(disc, float((tuc - tu - matvec(B, c)[None, :]).max()))
    return BlackwellReport(max(mono, 0.0), max(disc, 0.0), sample_count)


def verify_perov_inequality(mdp: AdditiveMdp, weight: WeightFunction | None = None, B=None,
                            sample_count: int = 100, rng_seed: int = 0, scale: float = 10.0,
                            atol: float = 1e-10) -> PerovReport:
    """Spot-check ``d(T v1, T v2) <= B d(v1, v2)`` in unit-weight components."""
    B = _coefficients(mdp, weight, B)
    kern = _Kernel(mdp, weight)
    rng = np.random.default_rng(rng_seed)
    shape = (mdp.nx, mdp.Z)
    worst, count = -np.inf, 0
    for k in range(sample_count):
        v1 = rng.normal(scale=scale, size=shape)
        # alternate far-apart pairs with near neighbours and shifted copies
        if k % 3 == 0:
            v2 = rng.normal(scale=scale, size=shape)
        elif k % 3 == 1:
            v2 = v1 + rng.normal(scale=scale * 1e-3, size=shape)
        else:
            v2 = v1 + rng.uniform(0.0, scale, size=mdp.Z)[None, :]
        t1, _ = kern.apply(v1)
        t2, _ = kern.apply(v2)
        excess = np.abs(t1 - t2).max(axis=0) - matvec(B, np.abs(v1 - v2).max(axis=0))
        worst = max(worst, float(excess.max()))
        count += int((excess > atol).any())
    return PerovReport(max(worst, 0.0), count, sample_count)


@dataclass
class SolveReport:
    iterations: int
    distance_trace: np.ndarray
    fitted_rate: float | None
    aposteriori_bound: np.ndarray
    B: np.ndarray
    certificate: SpectralCertificate
    converged: bool
    tol: float
    clamp_count: int = 0
    extrapolation_count: int = 0

    @property
    def sup_trace(self) -> np.ndarray:
        return self.distance_trace.max(axis=1) if self.distance_trace.size else np.zeros(0)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "tol": self.tol,
            "fitted_rate": self.fitted_rate,
            "aposteriori_bound": self.aposteriori_bound.tolist(),
            "B": self.B.tolist(),
            "certificate": self.certificate.to_dict(),
            "final_distance": self.distance_trace[-1].tolist() if self.iterations else [],
            "clamp_count": self.clamp_count,
            "extrapolation_count": self.extrapolation_count,
        }


class PerovSolution(NamedTuple):
    scaled: ValueFunction | None
    value: ValueFunction | None
    report: SolveReport


def fitted_decay_rate(sup_trace) -> float | None:
    """Least-squares slope of ``log(distance)`` against iteration, last half only."""
    d = np.asarray(sup_trace, dtype=float)
    k = np.arange(1, d.size + 1)
    half = d.size // 2
    d, k = d[half:], k[half:]
    keep = d > 0
    if keep.sum() < 2:
        return None
    slope = np.polyfit(k[keep].astype(float), np.log(d[keep]), 1)[0]
    return float(slope)


def perov_solve(mdp: AdditiveMdp, weight: WeightFunction | None = None, v0: ValueFunction | None = None,
                tol: float = 1e-8, max_iter: int = 10_000, B=None,
                spectral_tol: float = DEFAULT_TOL) -> PerovSolution:
    """Iterate the scaled Bellman operator to its fixed point.

    Stops once the a-posteriori bound ``(I - B)^{-1} B d(v_k, v_{k+1})`` has
    every component at most ``tol``; that vector bounds the distance of the
    returned iterate from the true fixed point. ``B`` defaults to the grid
    coefficient matrix from :func:`compute_tilde_beta`; a user-supplied ``B``
    must dominate it for the bound to be valid.

    Raises :class:`SpectralConditionError` unless ``B`` is certified
    contractive. When ``max_iter`` runs out the report has
    ``converged=False`` and no fixed point is returned.
    """
    if not tol > 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")
    weight = weight if weight is not None else unit_weight()
    B = _coefficients(mdp, weight, B)
    cert = spectral_radius(B, spectral_tol)
    if cert.verdict() != "contractive":
        raise SpectralConditionError(
            f"coefficient matrix is not certified contractive (radius={cert.radius:.12g}, "
            f"bracket=[{cert.lower_bound:.12g}, {cert.upper_bound:.12g}])", cert)
    kern = _Kernel(mdp, weight)
    if v0 is None:
        cur = np.zeros((mdp.nx, mdp.Z))
    else:
        _check_same_grid(mdp, v0)
        cur = np.array(v0.values)

    series_tol = tol * 1e-3
    trace = []
    bound = np.full(mdp.Z, np.inf)
    converged = False
    for _ in range(max_iter):
        new, _ = kern.apply(cur)
        if not np.all(np.isfinite(new)):
            raise RuntimeError("iterate became non-finite")
        d = np.abs(new - cur).max(axis=0)
        trace.append(d)
        cur = new
        Bd = matvec(B, d)
        # the Neumann sum dominates Bd, so skip it while Bd alone exceeds tol
        if Bd.max() <= tol:
            bound = neumann_apply(B, Bd, series_tol, cert) + series_tol
            if bound.max() <= tol:
                converged = True
                break
    if trace and not converged:
        bound = neumann_apply(B, matvec(B, trace[-1]), series_tol, cert) + series_tol

    trace_arr = np.array(trace).reshape(len(trace), mdp.Z)
    report = SolveReport(
        iterations=len(trace),
        distance_trace=trace_arr,
        fitted_rate=fitted_decay_rate(trace_arr.max(axis=1)) if trace else None,
        aposteriori_bound=bound,
        B=B,
        certificate=cert,
        converged=converged,
        tol=tol,
        clamp_count=mdp.clamp_count,
        extrapolation_count=mdp.extrapolation_count,
    )
    if not converged:
        log.warning("no convergence after %d iterations (bound %g)", len(trace), float(bound.max()))
        return PerovSolution(None, None, report)
    scaled = ValueFunction(mdp.x_grid, cur)
    return PerovSolution(scaled, ValueFunction(mdp.x_grid, cur * kern.K), report)
