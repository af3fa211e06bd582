"""Exact enumeration over tabulated finite families.

The joint law of (sample x', new pair x, parameter θ) is kept factored as
prior weight × sample likelihood × cell probability; marginals and
conditionals are computed by explicit summation over the enumerated axes,
never by the closed algebra the predictive module uses. This makes it an
independent ground truth for the posterior, the predictive estimators and
their Bayes risks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .integrate import golden_section_max
from .models import FiniteTableFamily
from .posterior import build_posterior
from .predictive import Event, PredictiveEvaluator

MAX_SAMPLE_SIZE = 4
MAX_TABLE_SIZE = 10**7
POOL_SIZE = 200
LOSSES = ("sq_tv", "sq_l1", "sq_linf", "sq_error")


class TableSizeError(ValueError):
    """The enumeration would exceed the size caps."""


@dataclass(frozen=True, eq=False)
class JointTable:
    """Enumerated joint law; ``mass(k, s, c) = w[k] · lik[k, s] · cell[k, c]``.

    ``s`` indexes every sample in ``cells^n`` (row of ``samples``), ``c`` a
    grid cell ``(i, j)`` flattened in C order.
    """

    family: FiniteTableFamily
    n: int
    weights: np.ndarray = field(repr=False)
    cell: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    lik: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return len(self.weights), self.samples.shape[0], self.cell.shape[1]

    def dense(self) -> np.ndarray:
        """The full ``(K, S, C)`` mass array."""
        return self.weights[:, None, None] * self.lik[:, :, None] * self.cell[:, None, :]

    def pairs(self, s: int) -> np.ndarray:
        """Sample ``s`` as an ``(n, 2)`` array of observation values."""
        fam = self.family
        i, j = np.unravel_index(self.samples[s], fam.table.shape[1:])
        return np.column_stack([np.asarray(fam.x1_values)[i], np.asarray(fam.x2_values)[j]]).reshape(-1, 2)

    def sample_index(self, X) -> int:
        fam = self.family
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        if X.shape[0] != self.n:
            raise ValueError(f"sample has {X.shape[0]} pairs, table enumerates n={self.n}")
        cells = [fam.x1_values.index(a) * len(fam.x2_values) + fam.x2_values.index(b) for a, b in X]
        return int(np.ravel_multi_index(cells, (self.cell.shape[1],) * self.n)) if self.n else 0

    def total_mass(self) -> float:
        return math.fsum(self.dense().ravel())


def build_joint_table(family: FiniteTableFamily, n: int) -> JointTable:
    if not 0 <= n <= MAX_SAMPLE_SIZE:
        raise TableSizeError(f"n={n} outside [0, {MAX_SAMPLE_SIZE}]")
    K = len(family.thetas)
    C = family.cell_count
    if C**n * K >= MAX_TABLE_SIZE:
        raise TableSizeError(f"(|Ω1||Ω2|)^n·|Θ| = {C**n * K} exceeds {MAX_TABLE_SIZE}")
    cell = family.table.reshape(K, C)
    samples = np.array(list(itertools.product(range(C), repeat=n)), dtype=int).reshape(C**n, n)
    lik = np.ones((K, samples.shape[0]))
    for col in range(n):
        lik = lik * cell[:, samples[:, col]]
    return JointTable(family, n, np.asarray(family.weights, float), cell, samples, lik)


def _fsum_axis(a: np.ndarray, axis) -> np.ndarray:
    """Compensated sum over ``axis`` (fixed order, bit-stable)."""
    a = np.moveaxis(a, axis, -1)
    return np.array([math.fsum(row) for row in a.reshape(-1, a.shape[-1])]).reshape(a.shape[:-1])


def _fam_posterior_masses(family: FiniteTableFamily, X) -> np.ndarray:
    post = build_posterior(family, family.default_prior(), X)
    return post.node_masses


def check_joint_law_identities(table: JointTable, max_samples: int = 4096) -> dict:
    """Maximum absolute violation of each marginal/conditional identity of the enumerated law.

    The two posterior identities compare the enumerated conditional of θ
    with :func:`~postpred.posterior.build_posterior` (all samples up to
    ``max_samples``, then an even stride).
    """
    mass = table.dense()
    K, S, C = mass.shape
    w = table.weights
    out = {}
    q_marg = _fsum_axis(mass.reshape(K, S * C), 1)
    out["param_marginal_is_prior"] = float(np.max(np.abs(q_marg - w)))
    s_marg = _fsum_axis(np.moveaxis(mass, 1, 0).reshape(S, K * C), 1)
    beta = _fsum_axis((w[:, None] * table.lik).T, 1)
    out["sample_marginal_is_prior_mixture"] = float(np.max(np.abs(s_marg - beta)))
    pos = q_marg > 0
    cond_s = _fsum_axis(mass, 2)[pos] / q_marg[pos, None]
    out["sample_given_param_is_product"] = float(np.max(np.abs(cond_s - table.lik[pos])))
    cond_c = _fsum_axis(np.moveaxis(mass, 2, 1), 2)[pos] / q_marg[pos, None]
    out["pair_given_param_is_model"] = float(np.max(np.abs(cond_c - table.cell[pos])))

    step = max(1, -(-S // max_samples))
    worst = 0.0
    for s in range(0, S, step):
        if s_marg[s] <= 0:
            continue
        enumerated = _fsum_axis(mass[:, s, :], 1) / s_marg[s]
        worst = max(worst, float(np.max(np.abs(enumerated - _fam_posterior_masses(table.family, table.pairs(s))))))
    out["param_given_sample_is_posterior"] = worst

    c_marg = _fsum_axis(np.moveaxis(mass, 2, 0).reshape(C, K * S), 1)
    worst = 0.0
    fam = table.family
    for c in range(C):
        if c_marg[c] <= 0:
            continue
        i, j = divmod(c, len(fam.x2_values))
        enumerated = _fsum_axis(mass[:, :, c], 1) / c_marg[c]
        pair = np.array([[fam.x1_values[i], fam.x2_values[j]]])
        worst = max(worst, float(np.max(np.abs(enumerated - _fam_posterior_masses(fam, pair)))))
    out["param_given_pair_is_one_step_posterior"] = worst
    out["max"] = max(out.values())
    return out


def _param_given_sample_x1(table: JointTable, s: int, i: int) -> np.ndarray:
    """Enumerated ``Π(θ | π' = x', π1 = x1)``."""
    fam = table.family
    J = len(fam.x2_values)
    joint = table.weights * table.lik[:, s] * _fsum_axis(table.cell[:, i * J : (i + 1) * J], 1)
    total = math.fsum(joint)
    if not total > 0:
        raise ZeroDivisionError("conditioning event (x', x1) has zero mass")
    return joint / total


def exact_conditional_event_probability(table: JointTable, X, x1, event: Event) -> float:
    """``E[P_θ(X2 ∈ A | X1 = x1) | π' = x', π1 = x1]`` by enumeration."""
    fam = table.family
    s = table.sample_index(X)
    i = fam.x1_values.index(float(x1))
    J = len(fam.x2_values)
    post = _param_given_sample_x1(table, s, i)
    sel = event.contains(np.asarray(fam.x2_values))
    block = table.cell[:, i * J : (i + 1) * J]
    marg = block.sum(axis=1)
    h = np.divide(block[:, sel].sum(axis=1), marg, out=np.zeros_like(marg), where=marg > 0)
    return math.fsum(post * h)


def check_predictive_marginal_identity(table: JointTable, X) -> float:
    """Max gap between the first-pair marginal of the n-fold predictive and the one-pair predictive."""
    s = table.sample_index(X)
    K, S, C = table.shape
    post = table.weights * table.lik[:, s]
    total = math.fsum(post)
    if not total > 0:
        raise ZeroDivisionError("sample has zero mass")
    post = post / total
    if table.n == 0:
        return 0.0
    nfold = _fsum_axis((post[:, None] * table.lik).T, 1)
    first = np.zeros(C)
    for c in range(C):
        first[c] = math.fsum(nfold[table.samples[:, 0] == c])
    one = _fsum_axis((post[:, None] * table.cell).T, 1)
    return float(np.max(np.abs(first - one)))


# ---------------------------------------------------------------------------
# Losses on probability functions over the x2 grid
# ---------------------------------------------------------------------------


def _loss_arrays(kind: str, est, truth, x2):
    """Loss between estimate(s) and truth(s); broadcasting over leading axes."""
    if kind == "sq_error":
        return (est - truth) ** 2
    d = est - truth
    if kind == "sq_tv":
        return (0.5 * np.abs(d).sum(axis=-1)) ** 2
    if kind == "sq_l1":
        return np.abs(d).sum(axis=-1) ** 2
    if kind == "sq_linf":
        return np.max(np.abs(np.cumsum(d, axis=-1)), axis=-1) ** 2
    raise ValueError(f"unknown loss {kind!r}")


def discrete_loss(kind: str, est, truth, x2=None) -> float:
    return float(_loss_arrays(kind, np.asarray(est, float), np.asarray(truth, float), x2))


def _truths(family: FiniteTableFamily):
    """True conditional pmf ``(K, I, J)`` and regression ``(K, I)``; NaN where undefined."""
    tab = family.table
    marg = tab.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pmf = tab / marg
    return pmf, pmf @ np.asarray(family.x2_values)


def _weights(table: JointTable) -> np.ndarray:
    """``Q(θ) R_θ^n(x') R_θ^{π1}(x1)`` as a ``(K, S, I)`` array."""
    fam = table.family
    return table.weights[:, None, None] * table.lik[:, :, None] * fam.table.sum(axis=2)[:, None, :]


def exact_bayes_risk(table: JointTable, estimator: Callable, loss: str) -> float:
    """``Σ_{θ, x', x1} Q R^n R^{π1} · loss(estimator(x', x1), truth(θ, x1))``, compensated.

    ``estimator(X, x1)`` returns a probability vector over the x2 grid, or a
    real number for ``loss="sq_error"``.
    """
    fam = table.family
    pmf, reg = _truths(fam)
    W = _weights(table)
    K, S, I = W.shape
    terms = []
    for s in range(S):
        if not W[:, s, :].any():
            continue
        X = table.pairs(s)
        for i in range(I):
            if not W[:, s, i].any():
                continue
            est = estimator(X, fam.x1_values[i])
            for k in range(K):
                if W[k, s, i] > 0:
                    truth = reg[k, i] if loss == "sq_error" else pmf[k, i]
                    terms.append(W[k, s, i] * discrete_loss(loss, est, truth))
    return math.fsum(terms)


def _bayes_grid(table: JointTable):
    """Bayes pmf ``(S, I, J)`` from the predictive module, NaN where (x', x1) has zero mass."""
    fam = table.family
    K, S, _ = table.shape
    I, J = len(fam.x1_values), len(fam.x2_values)
    W = _weights(table)
    out = np.full((S, I, J), np.nan)
    for s in range(S):
        if not W[:, s, :].any():
            continue
        ev = PredictiveEvaluator(build_posterior(fam, fam.default_prior(), table.pairs(s)))
        for i in range(I):
            if W[:, s, i].any():
                out[s, i] = ev.conditional_pmf(fam.x1_values[i])
    return out


def bayes_estimates(table: JointTable):
    """Bayes pmf ``(S, I, J)`` and regression ``(S, I)`` on every positive-mass (x', x1)."""
    pmf = _bayes_grid(table)
    return pmf, pmf @ np.asarray(table.family.x2_values)


def _normalise(p):
    p = np.clip(p, 0.0, None)
    tot = p.sum(axis=-1, keepdims=True)
    return np.where(tot > 0, p / np.where(tot > 0, tot, 1.0), 1.0 / p.shape[-1])


def competitor_pool(table: JointTable, bayes_pmf: np.ndarray, size: int = POOL_SIZE, seed: int = 20240101):
    """``size`` competitor estimators as ``(name, pmf (S, I, J), regression (S, I))`` triples.

    Members: the prior predictive, a plug-in at every θ, the posterior-mode
    plug-in, ±0.05 sign patterns on the Bayes probabilities (renormalised),
    shrinkages toward the prior predictive, the uniform law and the mode
    plug-in, then seeded random per-cell perturbations to fill the pool.
    Regression competitors are the means of the competitor laws plus, for
    the perturbed members, a ±0.05 shift.
    """
    fam = table.family
    x2 = np.asarray(fam.x2_values)
    K, S, _ = table.shape
    I, J = len(fam.x1_values), len(x2)
    truth_pmf, _ = _truths(fam)
    pool = []

    def add(name, pmf, shift=0.0):
        pmf = np.where(np.isnan(bayes_pmf), np.nan, pmf)
        pool.append((name, pmf, pmf @ x2 + shift))

    prior_tab = PredictiveEvaluator(build_posterior(fam, fam.default_prior(), np.empty((0, 2))))
    prior_pmf = np.stack(
        [prior_tab.conditional_pmf(a) if prior_tab.predictive_marginal1(a) > 0 else np.full(J, 1.0 / J) for a in fam.x1_values]
    )
    add("prior_predictive", np.broadcast_to(prior_pmf, (S, I, J)))
    safe_truth = np.where(np.isnan(truth_pmf), 1.0 / J, truth_pmf)
    for k, th in enumerate(fam.thetas):
        add(f"plug_in[{th:g}]", np.broadcast_to(safe_truth[k], (S, I, J)))
    mode = np.argmax(table.weights[:, None] * table.lik, axis=0)
    map_pmf = safe_truth[mode]
    add("plug_in_mode", map_pmf)
    for signs in itertools.product((-1.0, 1.0), repeat=J):
        sv = np.asarray(signs)
        add(f"pattern{tuple(int(x) for x in signs)}", _normalise(bayes_pmf + 0.05 * sv), shift=0.05 * sv[0])
    uniform = np.full((S, I, J), 1.0 / J)
    for lam in (0.05, 0.1, 0.25, 0.5):
        for name, target in (("prior", prior_pmf), ("uniform", uniform), ("mode", map_pmf)):
            add(f"shrink_{name}[{lam}]", (1 - lam) * bayes_pmf + lam * target)
    rng = np.random.default_rng(seed)
    while len(pool) < size:
        r = len(pool)
        scale = (0.02, 0.05, 0.1, 0.3)[r % 4]
        z = rng.standard_normal((S, I, J))
        add(f"random[{r}]", _normalise(bayes_pmf * np.exp(scale * z) + 1e-3 * scale * np.abs(z)), shift=scale * rng.standard_normal())
    return pool[:size]


def pool_risks(table: JointTable, pmf: np.ndarray, reg: np.ndarray) -> dict:
    """Exact risk of one (pmf, regression) estimator for every loss."""
    truth_pmf, truth_reg = _truths(table.family)
    W = _weights(table)
    out = {}
    for kind in LOSSES:
        if kind == "sq_error":
            L = (reg[None, :, :] - truth_reg[:, None, :]) ** 2
        else:
            L = _loss_arrays(kind, pmf[None, :, :, :], truth_pmf[:, None, :, :], None)
        L = np.where(W > 0, L, 0.0)
        out[kind] = math.fsum((W * L).ravel())
    return out


@dataclass
class OptimalityReport:
    family: str
    n: int
    bayes: dict
    best_competitor: dict
    best_name: dict
    violations: list
    non_strict: list

    @property
    def passed(self) -> bool:
        return not self.violations and not self.non_strict


def check_exact_optimality(table: JointTable, size: int = POOL_SIZE, seed: int = 20240101, tol: float = 1e-13) -> OptimalityReport:
    """Exact Bayes risk of the predictive estimators against the competitor pool, per loss.

    A violation is a competitor with risk below the Bayes risk by more than
    ``tol``; a non-strict member differs from the Bayes estimator on a
    positive-mass point but does not have a strictly larger risk.
    """
    bayes_pmf, bayes_reg = bayes_estimates(table)
    base = pool_risks(table, bayes_pmf, bayes_reg)
    best = {k: math.inf for k in LOSSES}
    best_name = {k: "" for k in LOSSES}
    violations, non_strict = [], []
    for name, pmf, reg in competitor_pool(table, bayes_pmf, size, seed):
        risks = pool_risks(table, pmf, reg)
        live = ~np.isnan(bayes_reg)
        differs_pmf = bool(np.nanmax(np.abs(pmf - bayes_pmf)) > 1e-12)
        differs_reg = bool(np.max(np.abs(reg[live] - bayes_reg[live])) > 1e-12)
        for kind in LOSSES:
            r = risks[kind]
            if r < best[kind]:
                best[kind], best_name[kind] = r, name
            if r < base[kind] - tol:
                violations.append((kind, name, base[kind] - r))
            elif (differs_reg if kind == "sq_error" else differs_pmf) and not r > base[kind]:
                non_strict.append((kind, name))
    return OptimalityReport(table.family.label, table.n, base, best, best_name, violations, non_strict)


def best_constant_regression(table: JointTable, lo: float, hi: float) -> float:
    """Constant ``c`` minimising the exact squared-error risk, by golden-section search."""

    def neg_risk(c):
        return -exact_bayes_risk(table, lambda X, x1: c, "sq_error")

    return golden_section_max(neg_risk, lo, hi)


def mean_regression_truth(table: JointTable) -> float:
    """The Π_n-mean of ``r_θ(x1)``, the analytic minimiser over constants."""
    _, reg = _truths(table.family)
    W = _weights(table)
    R = np.where(W > 0, reg[:, None, :], 0.0)
    return math.fsum((W * R).ravel()) / math.fsum(W.ravel())
