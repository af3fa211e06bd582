"""Acceptance criteria, one timed PASS/FAIL line each.

Run with ``pytest -v -s tests/test_acceptance.py`` to see only these lines, or
read them in the full ``pytest -v`` output (they bypass capture).
"""

import functools
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from postpred.discrete_oracle import build_joint_table, check_exact_optimality
from postpred.estimators import BayesPredictiveEstimator
from postpred.models import (
    SHIPPED_FINITE_FAMILIES,
    coin_conditional_pf_cf,
    coin_regression_cf,
    make_family,
    shipped_family,
)
from postpred.posterior import build_posterior
from postpred.predictive import PredictiveEvaluator
from postpred.risk import LossKind, compare_estimators, competitor
from postpred.validation import validate_continuous


def _emit(capsys, crit, label, ok, elapsed, detail=""):
    line = f"ACCEPTANCE {crit} {label}: {'PASS' if ok else 'FAIL'} ({elapsed:.2f}s) {detail}".rstrip()
    with capsys.disabled():
        print("\n" + line)
    return ok


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.abs(b)))


# -- 1. gamma worked example --------------------------------------------------


def test_criterion_1_gamma_example(capsys):
    t0 = time.perf_counter()
    fam = make_family("gamma", lam=1.0)
    X = [[2.0, 3.0]]
    want = {"density": 0.4, "cdf": 1 - 1.1**-4, "regression": 10 / 3}
    got = {}
    for engine in ("closed-form", "numeric"):
        est = BayesPredictiveEstimator(fam, None, engine).fit(X)
        got[engine] = {
            "density": float(est.conditional_density(1.0, 0.0)),
            "cdf": float(est.conditional_cdf(1.0, 1.0)),
            "regression": float(est.predict([1.0])[0]),
        }
    elapsed = time.perf_counter() - t0
    cf_err = max(abs(got["closed-form"][k] - v) for k, v in want.items())
    num_rel = max(_rel(got["numeric"][k], v) for k, v in want.items())
    ok = cf_err <= 1e-12 and num_rel <= 1e-6 and elapsed < 1.0
    _emit(capsys, 1, "gamma closed forms", ok, elapsed, f"closed-form err {cf_err:.2e}, quadrature rel {num_rel:.2e}")
    assert ok


# -- 2. coin worked example ---------------------------------------------------


def test_criterion_2_coin_exact(capsys):
    t0 = time.perf_counter()
    fam = make_family("coin")
    X = np.array([[1.0, 1.0], [1.0, 0.0]])
    empty = np.empty((0, 2))
    exact_ok = (
        coin_conditional_pf_cf(X, 1, 1, exact=True) == Fraction(5, 7)
        and coin_regression_cf(X, 0, exact=True) == Fraction(3, 7)
        and coin_conditional_pf_cf(empty, 1, 1, exact=True) == Fraction(2, 3)
    )
    errs = []
    for sample, x1, want_pf, want_reg in ((X, 1, 5 / 7, None), (X, 0, None, 3 / 7), (empty, 1, 2 / 3, None)):
        cf = BayesPredictiveEstimator(fam, None, "closed-form").fit(sample)
        general = PredictiveEvaluator(build_posterior(fam, fam.default_prior(), sample))
        if want_pf is not None:
            errs.append(abs(float(cf.conditional_density(x1, 1.0)) - want_pf))
            errs.append(abs(float(general.conditional_pmf(x1)[1]) - want_pf))
        if want_reg is not None:
            errs.append(abs(float(cf.predict([x1])[0]) - want_reg))
            errs.append(abs(general.regression_estimate(x1) - want_reg))
    elapsed = time.perf_counter() - t0
    worst = max(errs)
    ok = exact_ok and worst <= 1e-12 and elapsed < 1.0
    _emit(capsys, 2, "coin Beta-integral oracle", ok, elapsed, f"max err {worst:.2e}")
    assert ok


# -- 3. bivariate normal worked example ---------------------------------------


def _moment_oracle(X, sigma, rho, mu, tau):
    """Predictive (ρ1, σ1², m1) from the law of total (co)variance."""
    X = np.asarray(X, float).reshape(-1, 2)
    prec = 2 * len(X) / (sigma**2 * (1 + rho)) + 1 / tau**2
    mean = (X.sum() / (sigma**2 * (1 + rho)) + mu / tau**2) / prec
    v = 1 / prec
    return (rho * sigma**2 + v) / (sigma**2 + v), sigma**2 + v, mean


def test_criterion_3_normal_predictive(capsys):
    t0 = time.perf_counter()
    X = [[1.0, 2.0]]
    rho1, s1sq, m1 = _moment_oracle(X, 1.0, 0.0, 0.0, 1.0)
    params_ok = abs(rho1 - 0.25) < 1e-15 and abs(s1sq - 4 / 3) < 1e-15 and abs(m1 - 1.0) < 1e-15
    fam = make_family("normal", sigma=1.0, rho=0.0, mu=0.0, tau=1.0)
    ev = PredictiveEvaluator(build_posterior(fam, fam.default_prior(), X))
    n2 = stats.multivariate_normal(mean=[m1, m1], cov=s1sq * np.array([[1.0, rho1], [rho1, 1.0]]))
    grid = m1 + math.sqrt(s1sq) * np.linspace(-3.0, 3.0, 21)
    worst = 0.0
    for a in grid:
        num = ev.predictive_joint_density(a, grid)
        ref = n2.pdf(np.column_stack([np.full_like(grid, a), grid]))
        worst = max(worst, _rel(num, ref))
    reg_num = ev.regression_estimate(2.0)
    reg_cf = float(BayesPredictiveEstimator(fam, None, "closed-form").fit(X).predict([2.0])[0])
    reg_err = max(abs(reg_num - 1.25), abs(reg_cf - 1.25))
    elapsed = time.perf_counter() - t0
    ok = params_ok and worst <= 1e-6 and reg_err <= 1e-8 and elapsed < 10.0
    _emit(capsys, 3, "normal predictive", ok, elapsed, f"grid rel {worst:.2e}, regression err {reg_err:.2e}")
    assert ok


# -- 4. identity suite on the finite families ---------------------------------


def test_criterion_4_identity_suite(capsys):
    from postpred.validation import validate_finite

    t0 = time.perf_counter()
    worst = {}
    for name in SHIPPED_FINITE_FAMILIES:
        for c in validate_finite(shipped_family(name), n_max=3, tol=1e-12):
            worst[name] = max(worst.get(name, 0.0), c.value)
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = top <= 1e-12 and elapsed < 30.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    _emit(capsys, 4, "finite-family identities n<=3", ok, elapsed, detail)
    assert ok


# -- 5. exact optimality against the competitor pool --------------------------

OPT_NS = (1, 2, 3)
_OPT_ELAPSED = {}


@functools.lru_cache(maxsize=None)
def _optimality(name):
    t0 = time.perf_counter()
    reports = [check_exact_optimality(build_joint_table(shipped_family(name), n)) for n in OPT_NS]
    _OPT_ELAPSED[name] = time.perf_counter() - t0
    return reports


@pytest.mark.parametrize("loss", ["sq_tv", "sq_l1", "sq_linf", "sq_error"])
@pytest.mark.parametrize("name", SHIPPED_FINITE_FAMILIES)
def test_criterion_5_exact_optimality(capsys, name, loss):
    reports = _optimality(name)
    elapsed = sum(_OPT_ELAPSED.values())
    bad = [(r.n, c, gap) for r in reports for kind, c, gap in r.violations if kind == loss]
    weak = [(r.n, c) for r in reports for kind, c in r.non_strict if kind == loss]
    if bad:
        n, c, gap = max(bad, key=lambda v: v[2])
        detail = f"{len(bad)} competitors beat Bayes (worst {c} at n={n} by {gap:.3e})"
    elif weak:
        detail = f"{len(weak)} differing competitors tie Bayes"
    else:
        detail = "Bayes strictly best at n=" + ",".join(str(n) for n in OPT_NS)
    ok = not bad and not weak and elapsed < 120.0
    _emit(capsys, 5, f"{name}/{loss}", ok, elapsed, detail)
    assert ok


# -- 6. Monte-Carlo risk dominance, gamma family ------------------------------

MC_COMPETITORS = ("prior_predictive", "perturbed_bayes(0.2)", "plug_in_posterior_mean")


@pytest.fixture(scope="module")
def gamma_mc():
    fam = make_family("gamma", lam=1.0)
    names = ("bayes",) + MC_COMPETITORS
    t0 = time.perf_counter()
    comp = compare_estimators(fam, None, {k: competitor(k, fam) for k in names}, list(LossKind), n=5, reps=2000, seed=42)
    return comp, time.perf_counter() - t0


@pytest.mark.parametrize("loss", list(LossKind), ids=lambda k: k.value)
@pytest.mark.parametrize("other", MC_COMPETITORS)
def test_criterion_6_mc_dominance(capsys, gamma_mc, other, loss):
    comp, elapsed = gamma_mc
    diff, se = comp.margin(other, "bayes", loss)
    if other == "plug_in_posterior_mean":
        # Bayes may not lose by more than 3 paired standard errors
        ok = -diff <= 3 * se
        detail = f"bayes - plug-in = {-diff:.4g} ({-diff / se:+.2f} SE)"
    else:
        ok = diff > 3 * se
        detail = f"{other} - bayes = {diff:.4g} ({diff / se:+.2f} SE)"
    ok = ok and elapsed < 300.0
    _emit(capsys, 6, f"{other}/{loss.value}", ok, elapsed, detail)
    assert ok


# -- 7. structural properties and harness determinism -------------------------

STRUCT_FAMILIES = ("gamma", "coin", "normal") + tuple(SHIPPED_FINITE_FAMILIES)


@pytest.mark.parametrize("name", STRUCT_FAMILIES)
def test_criterion_7_structure(capsys, name):
    fam = shipped_family(name) if name in SHIPPED_FINITE_FAMILIES else make_family(name)
    t0 = time.perf_counter()
    checks = {c.name: c for c in validate_continuous(fam, cases=50, seed=7)}
    elapsed = time.perf_counter() - t0
    wanted = [checks["density_normalisation"], checks["cdf_monotone"], checks["cdf_limits"]]
    ok = all(c.ok for c in wanted)
    detail = ", ".join(f"{c.name} {c.value:.1e}" for c in wanted)
    _emit(capsys, 7, f"{name} 50 cases", ok, elapsed, detail)
    assert ok


def test_criterion_7_risk_report_determinism(capsys):
    fam = make_family("coin")
    names = ("bayes", "prior_predictive", "perturbed_bayes(0.2)", "plug_in_mle")
    ests = {k: competitor(k, fam) for k in names}
    t0 = time.perf_counter()
    tables = [compare_estimators(fam, None, ests, list(LossKind), 3, 120, 5, x1_per_rep=2, n_jobs=j).table() for j in range(1, 9)]
    elapsed = time.perf_counter() - t0
    ok = len(set(tables)) == 1
    _emit(capsys, 7, "RiskReport byte-identical over 1-8 workers", ok, elapsed, f"{len(set(tables))} distinct table(s)")
    assert ok
