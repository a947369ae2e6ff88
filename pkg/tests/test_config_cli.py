import csv
import json
import math

import numpy as np
import pytest

from conftest import CONFIGS
from oracles import rho_2x2
from perovdp.cli import (
    EXIT_CONFIG,
    EXIT_NONCONVERGED,
    EXIT_OK,
    EXIT_SPECTRAL,
    VALUES_HEADER,
    RunReport,
    cmd_classify,
    cmd_compare_conditions,
    cmd_solve,
    cmd_spectral,
    main,
)
from perovdp.config import parse_config
from perovdp.errors import ConfigError

HEAD = 'schema = "perovdp.config/v1"\n'


def matrix_cfg(B):
    rows = ", ".join("[" + ", ".join(repr(float(x)) for x in r) + "]" for r in B)
    return HEAD + f'[model]\nkind = "matrix"\n[matrix]\nB = [{rows}]\n'


def savings_cfg(P="[[1.0]]", R="1.0", y="0.0", beta="0.9", gamma=0.5, coefficient="auto",
                grid="n_w = 30\nn_shares = 21", extra=""):
    return HEAD + f"""[model]
kind = "savings"
[chain]
P = {P}
[savings]
R = {R}
y = {y}
discount = {beta}
coefficient = "{coefficient}"
[savings.utility]
kind = "crra"
gamma = {gamma}
[grid]
{grid}
{extra}"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---- parsing ----

def test_parse_shipped_configs():
    for name in ("gap", "crra_oracle", "divergent"):
        cfg = parse_config((CONFIGS / f"{name}.toml").read_text(), name)
        assert cfg.kind == "savings" and cfg.name == name.replace("_", "-")


@pytest.mark.parametrize("text, fragment", [
    ('schema = "perovdp.config/v1"\n[model]\nkind = \n[chain]\n', "line 3"),
    (HEAD + '[model]\nkind = "matrix"\n[matrix]\nB = [[0.5, "x"]]\n', "matrix.B"),
    (HEAD + '[model]\nkind = "matrix"\n[matrix]\nB = [[-0.5]]\n', "matrix.B"),
    (HEAD + '[model]\nkind = "nope"\n', "model.kind"),
    (HEAD + '[model]\nkind = "matrix"\ncolour = 1\n[matrix]\nB = [[0.5]]\n', "model.colour"),
    ('schema = "other/v9"\n[model]\nkind = "matrix"\n', "schema"),
    (HEAD + '[model]\nkind = "matrix"\n', "[matrix]"),
    (savings_cfg(P="[[0.5, 0.6], [0.5, 0.5]]", R="1.0", y="[0.0, 0.0]"), "chain.P"),
    (savings_cfg(gamma=1.5), "savings.utility.gamma"),
    (savings_cfg(extra="[solver]\ntol = -1.0\n"), "solver.tol"),
    (savings_cfg(extra="[solver]\nmax_iter = 2.5\n"), "solver.max_iter"),
    (savings_cfg(grid="n_w = 10\nw_min = 0.0"), "grid"),
    (savings_cfg(R="-1.0"), "savings"),
])
def test_parse_diagnostics(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "t.toml")
    assert fragment in str(info.value)
    assert str(info.value).startswith("t.toml")


def test_bad_config_exit_code(tmp_path, capsys):
    path = write(tmp_path, HEAD + '[model]\nkind = "matrix"\n[matrix]\nB = [[0.5, "x"]]\n')
    assert main(["spectral", "--config", str(path)]) == EXIT_CONFIG
    assert "matrix.B" in capsys.readouterr().err
    assert main(["spectral", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_verb_and_kind_mismatch_is_config_error(tmp_path):
    path = write(tmp_path, matrix_cfg([[0.5]]))
    assert main(["solve", "--config", str(path)]) == EXIT_CONFIG
    assert main(["classify", "--config", str(path)]) == EXIT_CONFIG


# ---- spectral ----

def test_spectral_scalar(tmp_path, capsys):
    rep = cmd_spectral(parse_config(matrix_cfg([[0.5]])))
    assert rep.spectral["certificate"].radius == pytest.approx(0.5, abs=1e-8)
    assert rep.verdict == "uniform condition: pass; spectral condition: pass"
    assert main(["spectral", "--config", str(write(tmp_path, matrix_cfg([[0.5]])))]) == EXIT_OK
    out = capsys.readouterr().out
    assert "gelfand trace" in out and "radius 0.5" in out


def test_spectral_gap_matrix():
    B = [[0.5, 0.55], [0.3, 0.3]]
    rep = cmd_spectral(parse_config(matrix_cfg(B)))
    assert rep.verdict == "uniform condition: fail; spectral condition: pass"
    assert rep.spectral["certificate"].radius == pytest.approx(rho_2x2(np.array(B)), abs=1e-8)


def test_spectral_identity_inconclusive():
    rep = cmd_spectral(parse_config(matrix_cfg(np.eye(2))))
    assert rep.spectral["certificate"].radius == pytest.approx(1.0, abs=1e-8)
    assert rep.verdict.endswith("spectral condition: inconclusive")


# ---- compare-conditions ----

def test_compare_conditions_cases():
    assert cmd_compare_conditions(parse_config(matrix_cfg([[0.5, 0.3], [0.2, 0.2]]))).verdict == "both pass"
    both_fail = savings_cfg(P="[[0.5, 0.5], [0.5, 0.5]]", R="1.1", y="[0.0, 0.0]", beta="0.95",
                            coefficient="general")
    assert cmd_compare_conditions(parse_config(both_fail)).verdict == "both fail"
    gap = cmd_compare_conditions(parse_config((CONFIGS / "gap.toml").read_text(), "gap"))
    assert gap.verdict == "only spectral passes"
    assert gap.conditions["max_row_sum"] > 1
    assert any("only spectral passes" in m for m in gap.messages)


# ---- classify ----

def test_classify_cases(tmp_path, capsys):
    div = cmd_classify(parse_config(savings_cfg(R="1.2", beta="0.95")))
    assert div.verdict == "Divergent"
    assert div.classification["certificate"]["radius"] == pytest.approx(0.95 * math.sqrt(1.2), abs=1e-10)
    assert cmd_classify(parse_config(savings_cfg(beta="0.0"))).verdict == "Convergent"
    tuned = savings_cfg(R=repr((1 / 0.95) ** 2), beta="0.95")
    assert cmd_classify(parse_config(tuned)).verdict == "Inconclusive"
    path = write(tmp_path, (CONFIGS / "divergent.toml").read_text())
    assert main(["classify", "--config", str(path)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("Divergent")


# ---- solve ----

def test_solve_myopic_config(tmp_path):
    out = tmp_path / "out"
    path = write(tmp_path, savings_cfg(beta="0.0", extra="[solver]\ntol = 1e-12\n"))
    assert main(["solve", "--config", str(path), "--out", str(out)]) == EXIT_OK
    rep = RunReport.loads((out / "report.json").read_text())
    assert rep.solve["iterations"] == 1
    rows = read_csv(out / "values.csv")
    assert rows[0] == VALUES_HEADER
    for w, z, v, vt, share in rows[1:]:
        assert float(v) == pytest.approx(2 * math.sqrt(float(w)), rel=1e-14)
        assert float(share) == 1.0
    trace = read_csv(out / "trace.csv")
    assert trace[0] == ["iteration", "d_0", "sup"]
    assert len(trace) == 2


def test_solve_oracle_block():
    cfg = parse_config(savings_cfg(P="[[0.8, 0.2], [0.3, 0.7]]", R="[[1.2, 0.85], [1.2, 0.85]]",
                                   y="[0.0, 0.0]", beta="0.87", grid="n_w = 30\nn_shares = 101",
                                   extra="[solver]\ntol = 1e-10\n[oracle]\nenabled = true\n"))
    rep = cmd_solve(cfg)
    assert rep.exit_code == EXIT_OK
    assert rep.oracle["max_rel_error_matched"] <= 1e-8
    assert rep.oracle["max_rel_error_continuous"] <= 1e-3
    assert np.all(np.asarray(rep.oracle["h_matched"]) >= 1)


def test_solve_refuses_divergent(tmp_path, capsys):
    path = write(tmp_path, (CONFIGS / "divergent.toml").read_text())
    out = tmp_path / "out"
    assert main(["solve", "--config", str(path), "--out", str(out)]) == EXIT_SPECTRAL
    rep = json.loads((out / "report.json").read_text())
    assert rep["verdict"] == "refused" and not (out / "values.csv").exists()


def test_solve_non_convergent(tmp_path):
    path = write(tmp_path, savings_cfg())
    out = tmp_path / "out"
    assert main(["solve", "--config", str(path), "--out", str(out), "--max-iter", "1"]) == EXIT_NONCONVERGED
    rep = RunReport.loads((out / "report.json").read_text())
    assert rep.solve["converged"] is False and rep.table is None
    assert not (out / "values.csv").exists()


def test_solve_tol_override(tmp_path):
    path = write(tmp_path, savings_cfg())
    out = tmp_path / "out"
    assert main(["solve", "--config", str(path), "--out", str(out), "--tol", "1e-4"]) == EXIT_OK
    rep = RunReport.loads((out / "report.json").read_text())
    assert rep.solve["tol"] == 1e-4
    assert max(rep.solve["aposteriori_bound"]) <= 1e-4
    assert main(["solve", "--config", str(path), "--tol", "-1"]) == EXIT_CONFIG


def test_solve_reports_checks_and_counters():
    rep = cmd_solve(parse_config((CONFIGS / "gap.toml").read_text(), "gap"))
    assert rep.exit_code == EXIT_OK
    assert rep.checks["blackwell"]["monotonicity_violation"] <= 1e-12
    assert rep.checks["perov"]["violations"] == 0
    assert rep.counters["clamp_count"] >= 0
    assert rep.solve["aposteriori_bound"] and max(rep.solve["aposteriori_bound"]) <= rep.solve["tol"]


def test_abstract_mdp_config():
    text = HEAD + """[model]
kind = "abstract-mdp"
[chain]
P = [[0.9, 0.1], [0.2, 0.8]]
[mdp]
x_grid = [0.0, 1.0]
discount = 0.9
actions = [[[0.0, 1.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]]
reward = [[[0.0, -0.5], [0.2, -0.3]], [[1.0, 0.4], [1.2, 0.7]]]
next_x = [[[[0.0, 1.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]],
          [[[1.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]]]]
[solver]
tol = 1e-10
"""
    cfg = parse_config(text)
    sp = cmd_spectral(cfg)
    assert sp.spectral["certificate"].radius == pytest.approx(0.9, abs=1e-8)
    rep = cmd_solve(cfg)
    assert rep.exit_code == EXIT_OK
    # at x = 1 the payoff is best with action 0 and x stays put: v = r / (1 - beta) per state chain
    vals = {(r[0], r[1]): r[2] for r in rep.table}
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    v1 = np.linalg.solve(np.eye(2) - 0.9 * P, [1.0, 1.2])
    assert vals[(1.0, 0)] == pytest.approx(v1[0], abs=1e-8)
    assert vals[(1.0, 1)] == pytest.approx(v1[1], abs=1e-8)


def test_report_round_trip():
    rep = cmd_solve(parse_config(savings_cfg(extra="[solver]\nchecks = 1\n")))
    text = rep.dumps()
    again = RunReport.loads(text)
    assert again.dumps() == text
    assert again == RunReport.from_dict(json.loads(text))
    with pytest.raises(ValueError):
        RunReport.from_dict({**json.loads(text), "schema": "other"})
