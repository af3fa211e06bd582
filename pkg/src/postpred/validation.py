"""Self-checks run by ``postpred validate``.

Finite families get the exact enumeration identities; continuous families
get closed-form versus quadrature agreement plus normalisation and
monotonicity of the estimated conditionals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import ModelFamily, Prior
from .discrete_oracle import (
    build_joint_table,
    check_predictive_marginal_identity,
    check_joint_law_identities,
    exact_conditional_event_probability,
)
from .estimators import BayesPredictiveEstimator
from .integrate import DEFAULT_SETTINGS, QuadratureSettings
from .models import FiniteTableFamily
from .posterior import build_posterior
from .predictive import Event, PredictiveEvaluator


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return bool(self.value <= self.tolerance)

    def to_line(self) -> str:
        return f"{self.name},{self.value:.12g},{self.tolerance:.12g},{'pass' if self.ok else 'FAIL'}"


def event_indicator_violation(table, max_samples: int = 4096) -> float:
    """Max gap between the enumerated probability of ``X2 ∈ A`` given the sample and ``x1``
    and the predictive event probability, over positive-mass cells and every
    nonempty subset ``A`` of the x2 grid."""
    fam = table.family
    x2 = fam.x2_values
    subsets = [Event(points=c) for r in range(1, len(x2) + 1) for c in itertools.combinations(x2, r)]
    K, S, _ = table.shape
    step = max(1, -(-S // max_samples))
    worst = 0.0
    for s in range(0, S, step):
        if not (table.weights * table.lik[:, s]).any():
            continue
        X = table.pairs(s)
        ev = PredictiveEvaluator(build_posterior(fam, fam.default_prior(), X))
        for a in fam.x1_values:
            if not ev.predictive_marginal1(a) > 0:
                continue
            for A in subsets:
                lhs = exact_conditional_event_probability(table, X, a, A)
                worst = max(worst, abs(lhs - ev.conditional_probability_estimate(a, A)))
    return worst


def validate_finite(family: FiniteTableFamily, n_max: int = 2, tol: float = 1e-12) -> list:
    build_joint_table(family, n_max)  # fail fast on the size caps
    checks = []
    for n in range(n_max + 1):
        table = build_joint_table(family, n)
        checks.append(Check(f"joint_law_identities[n={n}]", check_joint_law_identities(table)["max"], tol))
        worst = 0.0
        for s in range(table.shape[1]):
            if (table.weights * table.lik[:, s]).any():
                worst = max(worst, check_predictive_marginal_identity(table, table.pairs(s)))
        checks.append(Check(f"predictive_marginal_identity[n={n}]", worst, tol))
        checks.append(Check(f"event_indicator_identity[n={n}]", event_indicator_violation(table), tol))
    return checks


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if a.size else 0.0


def validate_continuous(
    family: ModelFamily,
    prior: Prior | None = None,
    cases: int = 20,
    seed: int = 0,
    settings: QuadratureSettings = DEFAULT_SETTINGS,
) -> list:
    """Agreement and structure checks on ``cases`` random (θ, x', x1) draws."""
    prior = prior if prior is not None else family.default_prior()
    rng = np.random.default_rng(seed)
    closed = family.has_closed_form(prior)
    agree = norm = mono = limits = 0.0
    supp = family.x2_support
    for _ in range(cases):
        theta = float(prior.sample(rng))
        n = int(rng.integers(0, 6))
        X = family.sample(theta, rng, n) if n else np.empty((0, 2))
        x1 = float(family.sample(theta, rng, 1)[0, 0])
        num = BayesPredictiveEstimator(family, prior, "numeric", settings).fit(X)
        ev = num.evaluator_
        if supp.discrete:
            ts = supp.array
        else:
            loc, scale = family.x2_location_scale(theta, x1)
            ts = loc + scale * np.array([-2.0, -0.5, 0.0, 0.3, 1.0, 3.0])
            ts = ts[supp.contains(ts)]
        if closed:
            cf = BayesPredictiveEstimator(family, prior, "closed-form").fit(X)
            agree = max(
                agree,
                _rel(num.conditional_density(x1, ts), cf.conditional_density(x1, ts)),
                _rel(num.conditional_cdf(x1, ts), cf.conditional_cdf(x1, ts)),
                _rel(num.predict([x1]), cf.predict([x1])),
            )
        full = Event(points=tuple(supp.values)) if supp.discrete else Event(intervals=(supp.bounds,))
        norm = max(norm, abs(ev.conditional_probability_estimate(x1, full) - 1.0))
        grid = np.sort(np.concatenate([ts, ts + 0.5]))
        F = ev.conditional_cdf_estimate(x1, grid)
        mono = max(mono, float(np.max(np.maximum(-np.diff(F), 0.0), initial=0.0)))
        lo, hi = supp.bounds
        far = np.array([lo - 1.0 if math.isfinite(lo) else -1e8, hi if math.isfinite(hi) else 1e8])
        ends = ev.conditional_cdf_estimate(x1, far)
        limits = max(limits, abs(ends[0]), abs(1.0 - ends[1]))
    checks = [
        Check("density_normalisation", norm, 1e-6),
        Check("cdf_monotone", mono, 0.0),
        Check("cdf_limits", limits, 1e-6),
    ]
    if closed:
        checks.insert(0, Check("closed_form_vs_numeric", agree, 1e-6))
    return checks
