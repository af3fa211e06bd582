import subprocess
import sys

import numpy as np
import pytest

from postpred.cli import build_prior, main, parse_grid, parse_selector, read_samples, read_table


@pytest.fixture
def gamma_samples(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("# one pair\n2,3\n")
    return str(p)


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_estimate_single_pair(capsys, gamma_samples):
    code, out, _ = _run(capsys, "estimate", "--family", "gamma:lam=1", "--samples", gamma_samples, "--x1-grid", "1", "--x2-grid", "0", "--t-grid", "1")
    assert code == 0
    rows = read_table(out)
    byq = {r["quantity"]: r["value"] for r in rows}
    assert byq["regression"] == pytest.approx(10 / 3, rel=1e-11)
    assert byq["density"] == pytest.approx(0.4, rel=1e-11)
    assert byq["cdf"] == pytest.approx(1 - 1.1**-4, rel=1e-11)


def test_estimate_table_round_trips_at_printed_precision(capsys, gamma_samples, tmp_path):
    out_path = tmp_path / "t.csv"
    code, _, _ = _run(capsys, "estimate", "--samples", gamma_samples, "--x1-grid", "0.5:3:4", "--t-grid", "0:5:11", "--out", str(out_path))
    assert code == 0
    text = out_path.read_text()
    assert text.splitlines()[0] == "quantity,x1,arg,value"
    rows = read_table(text)
    rebuilt = "quantity,x1,arg,value\n" + "".join(
        f"{r['quantity']},{r['x1']:.12g},{'' if r['arg'] is None else format(r['arg'], '.12g')},{r['value']:.12g}\n" for r in rows
    )
    assert rebuilt == text
    for x1 in {r["x1"] for r in rows}:
        F = [r["value"] for r in rows if r["quantity"] == "cdf" and r["x1"] == x1]
        assert np.all(np.diff(F) >= 0)


def test_engine_both_reports_discrepancy(capsys, gamma_samples):
    code, out, err = _run(capsys, "estimate", "--samples", gamma_samples, "--x1-grid", "1:2:2", "--t-grid", "0.5", "--engine", "both")
    assert code == 0
    assert "max engine discrepancy" in err
    assert all(r["discrepancy"] <= 1e-4 for r in read_table(out))


def test_engine_both_on_coin_is_exact(capsys, tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("1,1\n1,0\n")
    code, out, _ = _run(capsys, "estimate", "--family", "coin", "--samples", str(p), "--x1-grid", "0:1:2", "--engine", "both")
    assert code == 0
    assert max(r["discrepancy"] for r in read_table(out)) <= 1e-12


def test_point_mass_prior_gives_true_curves(capsys, tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("# nothing\n")
    code, out, _ = _run(capsys, "estimate", "--family", "gamma", "--prior", "point:theta=2", "--samples", str(p), "--x1-grid", "0.5", "--t-grid", "1")
    assert code == 0
    byq = {r["quantity"]: r["value"] for r in read_table(out)}
    assert byq["regression"] == pytest.approx(1 / (2 * 0.5))
    assert byq["cdf"] == pytest.approx(1 - np.exp(-2 * 0.5 * 1))


def test_closed_form_engine_unavailable_is_config_error(capsys, gamma_samples):
    code, _, err = _run(capsys, "estimate", "--prior", "gamma:shape=2", "--samples", gamma_samples, "--x1-grid", "1", "--engine", "closed-form")
    assert code == 2 and "unavailable" in err


def test_parse_error_reports_line(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n\n# c\n1,two\n")
    code, _, err = _run(capsys, "estimate", "--samples", str(p), "--x1-grid", "1")
    assert code == 3 and ":4:" in err


def test_support_violation_reports_row(capsys, tmp_path):
    p = tmp_path / "neg.csv"
    p.write_text("1,2\n-1,3\n")
    code, _, err = _run(capsys, "estimate", "--samples", str(p), "--x1-grid", "1")
    assert code == 3 and "pair 1" in err


def test_x1_grid_outside_support(capsys):
    code, _, _ = _run(capsys, "estimate", "--family", "coin", "--x1-grid", "0.5")
    assert code == 3


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate", "--family", "gamma:bogus=1", "--x1-grid", "1"],
        ["estimate", "--family", "nope", "--x1-grid", "1"],
        ["estimate", "--prior", "weird", "--x1-grid", "1"],
        ["estimate", "--x1-grid", "1:0:3"],
        ["estimate"],
        ["validate", "--family", "finite:name=missing"],
    ],
)
def test_config_errors(capsys, argv):
    assert _run(capsys, *argv)[0] == 2


def test_config_file_and_override(capsys, tmp_path, gamma_samples):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[family]\nname = gamma\nlam = 2\n[run]\nsamples = {gamma_samples}\nx1_grid = 1\n[quadrature]\nnode_count = 129\n")
    code, out, _ = _run(capsys, "estimate", "--config", str(cfg))
    assert code == 0
    reg = read_table(out)[0]["value"]
    assert reg == pytest.approx(11 / 3)  # a = lam + x1 + S = 2 + 1 + 8, over 3 x1
    code, out, _ = _run(capsys, "estimate", "--config", str(cfg), "--family", "gamma:lam=1")
    assert read_table(out)[0]["value"] == pytest.approx(10 / 3)


@pytest.mark.parametrize("body", ["[run]\nbogus = 1\n", "[extra]\na = 1\n", "[quadrature]\nmax_doublings = 9\n", "[family]\nlam = 1\n", "[run]\nn = many\n"])
def test_config_file_rejects_unknowns(capsys, tmp_path, body):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(body)
    assert _run(capsys, "validate", "--config", str(cfg))[0] == 2


def test_validate_two_point(capsys):
    code, out, _ = _run(capsys, "validate", "--family", "finite:name=two_point", "--n", "3")
    assert code == 0
    rows = read_table(out)
    assert rows and all(r["max_violation"] < 1e-12 for r in rows)


def test_validate_gamma(capsys):
    code, out, _ = _run(capsys, "validate", "--family", "gamma", "--cases", "4", "--seed", "3")
    assert code == 0
    rows = {r["check"]: r for r in read_table(out)}
    assert rows["closed_form_vs_numeric"]["max_violation"] < 1e-6


def test_validate_size_cap(capsys):
    assert _run(capsys, "validate", "--family", "finite:name=ternary", "--n", "8")[0] == 2


def test_risk_singleton_is_zero_and_deterministic(capsys):
    argv = ["risk", "--family", "gamma", "--prior", "point:theta=1.5", "--n", "2", "--reps", "100", "--seed", "4",
            "--estimators", "prior_predictive,perturbed_bayes(0.2)", "--losses", "sq_error_regression,sq_Linf_cdf", "--x1-per-rep", "1"]
    code, out, _ = _run(capsys, *argv)
    assert code == 0
    rows = read_table(out)
    assert all(abs(r["mean"]) < 1e-20 for r in rows if r["estimator"] in ("bayes", "prior_predictive"))
    assert _run(capsys, *argv)[1] == out


class _FakeComparison:
    """Stands in for a run where a competitor beats bayes by many SEs."""

    def report(self, name, loss):
        from postpred.risk import RiskReport

        return RiskReport(name, loss.value, 2, 100, 1.0 if name == "bayes" else 0.5, 0.01, 0, "0" * 16)

    def margin(self, name, baseline, loss):
        return -0.5, 0.01


def test_risk_ordering_violation_exit(capsys, monkeypatch):
    monkeypatch.setattr("postpred.cli.compare_estimators", lambda *a, **k: _FakeComparison())
    code, out, err = _run(capsys, "risk", "--estimators", "prior_predictive", "--losses", "sq_total_variation", "--reps", "100")
    assert code == 5
    assert "beats bayes" in err


def test_risk_bad_loss_is_config_error(capsys):
    assert _run(capsys, "risk", "--losses", "sq_hinge", "--reps", "100")[0] == 2


def test_helpers():
    assert parse_selector("normal:sigma=2, rho=0.5") == ("normal", {"sigma": "2", "rho": "0.5"})
    assert parse_grid("0:1:3", "g").tolist() == [0.0, 0.5, 1.0]
    assert parse_grid("1;4", "g").tolist() == [1.0, 4.0]
    assert build_prior("finite", {"points": "1;2", "weights": "0.25;0.75"}).weight_array.tolist() == [0.25, 0.75]
    assert read_samples(None).shape == (0, 2)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "postpred.cli", "validate", "--family", "coin", "--cases", "2"], capture_output=True, text=True, env={"NO_COLOR": "1", "PATH": ""})
    assert res.returncode == 0
    assert "\033[" not in res.stderr
