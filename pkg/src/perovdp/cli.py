"""Command line front end: ``perovdp {spectral,solve,classify,compare-conditions}``.

Exit codes: 0 success, 2 configuration error, 3 spectral refusal,
4 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, load_config
from .errors import ConfigError, PerovError, PreconditionError, SpectralConditionError
from .mdp import (
    build_B,
    compute_tilde_beta,
    extract_policy,
    perov_solve,
    verify_blackwell,
    verify_perov_inequality,
)
from .savings import (
    build_savings_mdp,
    classify_problem,
    coefficient_matrix,
    crra_zero_income_oracle,
    solution_weight,
    utility_normalization,
    _resolve_coefficient,
)
from .spectral import compare_conditions, spectral_radius
from .vmetric import ValueFunction, unit_weight, weighted_norm

REPORT_SCHEMA = "perovdp.report/v1"
EXIT_OK, EXIT_CONFIG, EXIT_SPECTRAL, EXIT_NONCONVERGED = 0, 2, 3, 4

VALUES_HEADER = ["w", "z", "v", "v_tilde", "policy_share"]

log = logging.getLogger("perovdp")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _plain(obj):
    """Convert numpy containers to JSON-ready Python objects."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    return obj


@dataclass
class RunReport:
    command: str
    config: dict
    exit_code: int = EXIT_OK
    verdict: str | None = None
    spectral: dict | None = None
    conditions: dict | None = None
    solve: dict | None = None
    classification: dict | None = None
    oracle: dict | None = None
    checks: dict | None = None
    table: list | None = None
    trace: list | None = None
    counters: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)
    schema: str = REPORT_SCHEMA

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        if data.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {data.get('schema')!r}")
        return cls(**data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def loads(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


def _config_echo(cfg: ModelConfig) -> dict:
    return {"source": cfg.source, "kind": cfg.kind, "name": cfg.name, "data": _plain(cfg.raw)}


def _model_weight(cfg: ModelConfig):
    if cfg.weight_table:
        return cfg.weight()
    if cfg.kind == "savings":
        return solution_weight(cfg.params, cfg.coefficient, cfg.solver.target_margin)
    return unit_weight()


def coefficient_for(cfg: ModelConfig) -> tuple:
    """The matrix the spectral verbs examine, with a label."""
    if cfg.kind == "matrix":
        return cfg.matrix, "matrix"
    if cfg.kind == "savings":
        coef = _resolve_coefficient(cfg.params, cfg.coefficient)
        return coefficient_matrix(cfg.params, coef), coef
    w = _model_weight(cfg)
    return build_B(cfg.mdp.chain, compute_tilde_beta(cfg.mdp, w)), "grid"


def cmd_spectral(cfg: ModelConfig) -> RunReport:
    t0 = time.perf_counter()
    B, label = coefficient_for(cfg)
    cmp = compare_conditions(B, band=cfg.band, tol=cfg.spectral_tol)
    cert = cmp["certificate"]
    rep = RunReport("spectral", _config_echo(cfg))
    rep.spectral = {"coefficient": label, "B": B, "certificate": cert}
    rep.conditions = {k: v for k, v in cmp.items() if k != "certificate"}
    uniform = "pass" if cmp["uniform_condition"] else "fail"
    spectral = {"contractive": "pass", "expansive": "fail"}.get(cmp["spectral_condition"], "inconclusive")
    rep.verdict = f"uniform condition: {uniform}; spectral condition: {spectral}"
    rep.messages += [
        f"radius {cert.radius:.12g} in [{cert.lower_bound:.12g}, {cert.upper_bound:.12g}]",
        "gelfand trace: " + ", ".join(f"k={k}: {v:.10g}" for k, v in cert.gelfand_trace[:6]) + ", ...",
        f"row sums {np.array2string(cmp['row_sums'], precision=6)}",
        rep.verdict,
    ]
    rep.timings["spectral_s"] = time.perf_counter() - t0
    return rep


def cmd_compare_conditions(cfg: ModelConfig) -> RunReport:
    if cfg.kind == "abstract-mdp":
        raise ConfigError(f"{cfg.source}: compare-conditions needs a savings or matrix config")
    t0 = time.perf_counter()
    B, label = coefficient_for(cfg)
    cmp = compare_conditions(B, band=cfg.band, tol=cfg.spectral_tol)
    cert = cmp["certificate"]
    rep = RunReport("compare-conditions", _config_echo(cfg))
    rep.spectral = {"coefficient": label, "B": B, "certificate": cert}
    rep.conditions = {k: v for k, v in cmp.items() if k != "certificate"}
    rep.verdict = cmp["verdict"]
    rows = cmp["row_sums"]
    rep.messages += [f"{'state':>6}  {'row sum':>20}  uniform"]
    rep.messages += [f"{z:>6}  {r:>20.12g}  {'ok' if r < 1 else 'violated'}" for z, r in enumerate(rows)]
    rep.messages += [
        f"max row sum {cmp['max_row_sum']:.12g}  spectral radius {cert.radius:.12g}",
        f"{'uniform (row sums < 1)':<26}{'pass' if cmp['uniform_condition'] else 'fail'}",
        f"{'spectral (rho(B) < 1)':<26}{cmp['spectral_condition']}",
        rep.verdict,
    ]
    rep.timings["compare_s"] = time.perf_counter() - t0
    return rep


def cmd_classify(cfg: ModelConfig) -> RunReport:
    if cfg.kind != "savings":
        raise ConfigError(f"{cfg.source}: classify needs a savings config")
    t0 = time.perf_counter()
    cls = classify_problem(cfg.params, coefficient=cfg.coefficient, band=cfg.band)
    rep = RunReport("classify", _config_echo(cfg))
    rep.classification = cls.to_dict()
    rep.spectral = {"coefficient": cls.coefficient, "B": cls.B, "certificate": cls.certificate}
    rep.verdict = cls.verdict
    line = f"{cls.verdict}: radius {cls.certificate.radius:.12g}"
    if cls.growth_exponent is not None:
        line += f"; (v_T(1,z))^(1/T) at T=200: {np.array2string(cls.growth_exponent, precision=6)}"
    rep.messages += [line] + ([cls.reason] if cls.reason else [])
    rep.timings["classify_s"] = time.perf_counter() - t0
    return rep


def _initial(cfg, mdp, seed):
    init = cfg.solver.initial
    if init == "zero":
        return None
    if init == "random":
        rng = np.random.default_rng(seed)
        return ValueFunction(mdp.x_grid, rng.normal(size=(mdp.nx, mdp.Z)))
    return ValueFunction.constant(mdp.x_grid, mdp.Z, init)


def cmd_solve(cfg: ModelConfig, seed: int = 0) -> RunReport:
    if cfg.kind == "matrix":
        raise ConfigError(f"{cfg.source}: solve needs a savings or abstract-mdp config")
    rep = RunReport("solve", _config_echo(cfg))
    t0 = time.perf_counter()
    if cfg.kind == "savings":
        p = cfg.params
        mdp = build_savings_mdp(p)
        rep.counters["utility_normalization"] = utility_normalization(p)
        coef = _resolve_coefficient(p, cfg.coefficient)
        B_model = coefficient_matrix(p, coef)
        rep.spectral = {"coefficient": coef, "B": B_model, "certificate": spectral_radius(B_model, cfg.spectral_tol)}
        try:
            weight = _model_weight(cfg)
        except PreconditionError as exc:
            rep.exit_code = EXIT_SPECTRAL
            rep.verdict = "refused"
            rep.messages.append(str(exc))
            return rep
    else:
        mdp = cfg.mdp
        weight = _model_weight(cfg)
    rep.timings["build_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        sol = perov_solve(mdp, weight, _initial(cfg, mdp, seed), tol=cfg.solver.tol,
                          max_iter=cfg.solver.max_iter, spectral_tol=cfg.spectral_tol)
    except SpectralConditionError as exc:
        rep.exit_code = EXIT_SPECTRAL
        rep.verdict = "refused"
        rep.solve = {"weight": weight.describe(), "certificate": exc.certificate}
        rep.messages.append(str(exc))
        return rep
    rep.timings["solve_s"] = time.perf_counter() - t0
    r = sol.report
    rep.solve = {"weight": weight.describe(), **r.to_dict()}
    rep.counters.update(clamp_count=r.clamp_count, extrapolation_count=r.extrapolation_count)
    rep.trace = [[k + 1, *row, float(row.max())] for k, row in enumerate(r.distance_trace)]

    if cfg.solver.checks:
        t0 = time.perf_counter()
        bw = verify_blackwell(mdp, weight, cfg.solver.checks, seed, B=r.B)
        pv = verify_perov_inequality(mdp, weight, r.B, cfg.solver.checks, seed)
        rep.checks = {"blackwell": bw._asdict(), "perov": pv._asdict()}
        rep.timings["checks_s"] = time.perf_counter() - t0

    if not r.converged:
        rep.exit_code = EXIT_NONCONVERGED
        rep.verdict = "not converged"
        rep.messages.append(f"not converged after {r.iterations} iterations; "
                            f"a-posteriori bound {float(r.aposteriori_bound.max()):.3g} > tol {r.tol:g}")
        return rep

    policy = extract_policy(mdp, sol.value, weight)
    rows = []
    is_savings = cfg.kind == "savings"
    for i, x in enumerate(mdp.x_grid):
        for z in range(mdp.Z):
            act = policy[i, z] / x if is_savings else policy[i, z]
            rows.append([float(x), z, float(sol.value.values[i, z]), float(sol.scaled.values[i, z]), float(act)])
    rep.table = rows
    rep.verdict = "converged"
    rep.solve["weighted_norm"] = weighted_norm(sol.value, weight)
    rep.messages.append(
        f"converged in {r.iterations} iterations; radius of B {r.certificate.radius:.12g}; "
        f"a-posteriori bound {float(r.aposteriori_bound.max()):.3g}; fitted log-rate {r.fitted_rate}")
    if r.clamp_count:
        rep.messages.append(f"{r.clamp_count} transitions clamped at the grid maximum")

    if cfg.oracle_enabled:
        rep.oracle = _oracle_block(cfg, sol)
        if rep.oracle:
            rep.messages.append(
                f"oracle: max relative error {rep.oracle['max_rel_error_matched']:.3g} (matched shares), "
                f"{rep.oracle['max_rel_error_continuous']:.3g} (continuous shares)")
    return rep


def _oracle_block(cfg, sol):
    p = cfg.params
    if cfg.kind != "savings" or p.gamma is None or not p.zero_income:
        return {"skipped": "oracle needs CRRA utility with zero income"}
    alpha = 1.0 - p.gamma
    shape = p.w_grid[:, None] ** alpha / alpha
    out = {}
    for label, shares in (("matched", p.c_shares), ("continuous", None)):
        h = crra_zero_income_oracle(p, shares=shares)
        ref = h[None, :] * shape
        out[f"h_{label}"] = h
        out[f"max_rel_error_{label}"] = float(np.abs(sol.value.values / ref - 1.0).max())
    return out


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([c if isinstance(c, (int, np.integer)) and not isinstance(c, bool) else _fmt(c) for c in row])


def write_outputs(rep: RunReport, out: Path, Z: int | None = None):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.dumps() + "\n", encoding="utf-8")
    if rep.trace is not None and Z is not None:
        header = ["iteration"] + [f"d_{z}" for z in range(Z)] + ["sup"]
        write_csv(out / "trace.csv", header, rep.trace)
    if rep.table is not None:
        write_csv(out / "values.csv", VALUES_HEADER, rep.table)


COMMANDS = {
    "spectral": cmd_spectral,
    "solve": cmd_solve,
    "classify": cmd_classify,
    "compare-conditions": cmd_compare_conditions,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perovdp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None, help="output directory (default: print only)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--max-iter", type=int, default=None)
    return parser


def run(command: str, cfg: ModelConfig, seed: int = 0) -> RunReport:
    if command == "solve":
        return cmd_solve(cfg, seed)
    return COMMANDS[command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.tol is not None:
            if not args.tol > 0:
                raise ConfigError("--tol must be positive")
            if args.command == "solve":
                cfg.solver.tol = args.tol
            else:
                cfg.spectral_tol = args.tol
        if args.max_iter is not None:
            if args.max_iter < 0:
                raise ConfigError("--max-iter must be nonnegative")
            cfg.solver.max_iter = args.max_iter
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        rep = run(args.command, cfg, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PerovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for line in rep.messages:
        print(line)
    if args.out is not None:
        Z = cfg.params.Z if cfg.params is not None else (cfg.mdp.Z if cfg.mdp is not None else None)
        write_outputs(rep, args.out, Z)
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
