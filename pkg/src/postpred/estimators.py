"""Estimators of the conditional law of X2 given X1 with a scikit-learn surface.

``fit`` takes the observed pairs; ``predict`` returns the regression curve at
new x1 values; the remaining methods expose the conditional density (or
probability function), CDF and event probabilities.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import ModelFamily, Prior, log_joint_sample_density, validate_sample
from .integrate import DEFAULT_SETTINGS
from .posterior import build_posterior
from .predictive import Event, PredictiveEvaluator

ENGINES = ("auto", "closed-form", "numeric")


class EstimationError(RuntimeError):
    """An estimator could not be fitted (e.g. the likelihood search failed)."""


def _pairs(X, y):
    X = np.asarray(X, dtype=float)
    if y is not None:
        y = np.asarray(y, dtype=float).ravel()
        X = X.ravel()
        if X.shape != y.shape:
            raise ValueError(f"X and y lengths differ: {X.shape[0]} vs {y.shape[0]}")
        return np.column_stack([X, y]) if X.size else np.empty((0, 2))
    return X


def _x1_values(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 1:
        raise ValueError(f"expected x1 values of shape (m,) or (m, 1); got {X.shape}")
    return X


class ConditionalEstimator(RegressorMixin, BaseEstimator):
    """Shared surface. Subclasses provide ``_density``, ``_cdf`` and ``_regression``
    for a single ``x1`` and vectors of ``x2`` / ``t``."""

    def _resolve_prior(self):
        return self.prior if self.prior is not None else self.family.default_prior()

    def predict(self, X):
        check_is_fitted(self, "sample_")
        return np.array([self._regression(float(a)) for a in _x1_values(X)])

    def conditional_density(self, x1, x2):
        check_is_fitted(self, "sample_")
        return self._density(float(x1), np.asarray(x2, dtype=float))

    def conditional_cdf(self, x1, t):
        check_is_fitted(self, "sample_")
        return self._cdf(float(x1), np.asarray(t, dtype=float))

    def event_probability(self, x1, event: Event) -> float:
        """Estimated ``P(X2 ∈ event | X1 = x1)``, from the density or the probability function."""
        check_is_fitted(self, "sample_")
        supp = self.family.x2_support
        if supp.discrete:
            pts = supp.array
            return float(np.sum(self._density(float(x1), pts)[event.contains(pts)]))
        total = 0.0
        for a, b in event.intervals:
            total += float(self._cdf(float(x1), np.array(b))) - float(self._cdf(float(x1), np.array(a)))
        return total

    def discontinuities(self, x1) -> list:
        """x2 locations where the estimated density may jump (integration breakpoints)."""
        return []

    def predict_proba(self, X):
        """Rows of estimated conditional probabilities over ``classes_`` (discrete x2 only)."""
        check_is_fitted(self, "sample_")
        if not self.family.x2_support.discrete:
            raise TypeError("predict_proba needs a discrete x2 support")
        return np.vstack([self._density(float(a), self.classes_) for a in _x1_values(X)])

    def _set_sample(self, X, y):
        self.sample_ = validate_sample(self.family, _pairs(X, y))
        self.n_samples_ = self.sample_.shape[0]
        if self.family.x2_support.discrete:
            self.classes_ = self.family.x2_support.array
        return self.sample_


class BayesPredictiveEstimator(ConditionalEstimator):
    """Bayes estimators from the posterior predictive distribution.

    Parameters
    ----------
    family : ModelFamily
    prior : Prior, optional
        Defaults to ``family.default_prior()``.
    engine : {"auto", "closed-form", "numeric"}
        ``auto`` uses the closed forms when the family has them for this prior.
    settings : QuadratureSettings, optional
    method : {"quadrature", "mixture"}
        How the numeric engine computes the CDF and the regression: by x2
        integration of the estimated density, or by averaging the true
        conditional objects over the posterior (same quantity, faster).
    """

    def __init__(self, family: ModelFamily, prior: Prior | None = None, engine="auto", settings=None, method="quadrature"):
        self.family = family
        self.prior = prior
        self.engine = engine
        self.settings = settings
        self.method = method

    def fit(self, X, y=None):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}; got {self.engine!r}")
        X = self._set_sample(X, y)
        prior = self._resolve_prior()
        self.prior_ = prior
        self.closed_form_ = None
        self.evaluator_ = None
        if self.engine in ("auto", "closed-form"):
            try:
                self.closed_form_ = self.family.closed_form(X, prior)
            except (NotImplementedError, ValueError):
                if self.engine == "closed-form":
                    raise
        if self.closed_form_ is None:
            settings = self.settings or DEFAULT_SETTINGS
            self.evaluator_ = PredictiveEvaluator(build_posterior(self.family, prior, X, settings), settings)
            self.engine_ = "numeric"
        else:
            self.engine_ = "closed-form"
        return self

    def posterior_mean(self) -> float:
        check_is_fitted(self, "sample_")
        if self.closed_form_ is not None:
            return float(self.closed_form_.posterior_mean)
        return self.evaluator_.posterior_mean()

    def _density(self, x1, x2):
        if self.closed_form_ is not None:
            return self.closed_form_.conditional_density(x1, x2)
        return self.evaluator_.conditional_density_estimate(x1, x2)

    def _cdf(self, x1, t):
        if self.closed_form_ is not None:
            return self.closed_form_.conditional_cdf(x1, t)
        return self.evaluator_.conditional_cdf_estimate(x1, t, method=self.method)

    def _regression(self, x1):
        if self.closed_form_ is not None:
            return float(self.closed_form_.regression(x1))
        return self.evaluator_.regression_estimate(x1, method=self.method)


class PriorPredictiveEstimator(BayesPredictiveEstimator):
    """The Bayes estimator for an empty sample; ``fit`` records but ignores the data."""

    def fit(self, X, y=None):
        super().fit(np.empty((0, 2)))
        self._set_sample(X, y)
        return self


class PlugInEstimator(ConditionalEstimator):
    """True conditional objects evaluated at a point estimate of θ.

    ``point="posterior_mean"`` uses the posterior mean; ``point="mle"``
    maximises the sample likelihood over the (truncated) prior support.
    """

    def __init__(self, family: ModelFamily, prior: Prior | None = None, point="posterior_mean", engine="auto", settings=None):
        self.family = family
        self.prior = prior
        self.point = point
        self.engine = engine
        self.settings = settings

    def fit(self, X, y=None):
        X = self._set_sample(X, y)
        prior = self._resolve_prior()
        if self.point == "posterior_mean":
            bayes = BayesPredictiveEstimator(self.family, prior, self.engine, self.settings).fit(X)
            self.theta_ = bayes.posterior_mean()
        elif self.point == "mle":
            self.theta_ = maximum_likelihood(self.family, prior, X, self.settings or DEFAULT_SETTINGS)
        else:
            raise ValueError(f"point must be 'posterior_mean' or 'mle'; got {self.point!r}")
        return self

    def _density(self, x1, x2):
        return self.family.true_conditional_density(self.theta_, x1, x2)

    def _cdf(self, x1, t):
        return self.family.true_conditional_cdf(self.theta_, x1, t)

    def _regression(self, x1):
        return float(self.family.true_regression(self.theta_, x1))


def maximum_likelihood(family: ModelFamily, prior: Prior, X, settings=DEFAULT_SETTINGS) -> float:
    """Maximiser of ``Σ log f_θ(x'_i)`` over the prior's support."""
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    if X.shape[0] == 0:
        raise EstimationError("maximum likelihood needs at least one pair")

    def nll(t):
        with np.errstate(divide="ignore"):
            v = -float(log_joint_sample_density(family, np.array(t), X))
        return v if math.isfinite(v) else 1e300

    if prior.is_finite:
        pts = prior.point_array[prior.weight_array > 0]
        return float(pts[int(np.argmin([nll(p) for p in pts]))])
    lo, hi = prior.truncated_support(settings.truncation_mass)
    # coarse scan, then a bounded search around the best cell
    grid = np.linspace(lo, hi, 513)[1:-1]
    vals = np.array([nll(t) for t in grid])
    i = int(np.argmin(vals))
    a = grid[i - 1] if i > 0 else lo
    b = grid[i + 1] if i < len(grid) - 1 else hi
    res = optimize.minimize_scalar(nll, bounds=(a, b), method="bounded", options={"xatol": 1e-12 * max(1.0, abs(b))})
    if not (res.success and math.isfinite(res.fun) and res.fun < 1e300):
        raise EstimationError(f"likelihood search failed on [{lo}, {hi}]: {res.message}")
    return float(res.x)


class PerturbedBayesEstimator(ConditionalEstimator):
    """The Bayes estimator moved by ``epsilon``.

    Continuous x2: density and CDF are shifted right by ``epsilon`` and the
    regression by ``+epsilon``. Discrete x2: the probability function is
    mixed with a point mass at the largest support point, weight
    ``min(|epsilon|, 1)``; the regression is still shifted by ``+epsilon``.
    """

    def __init__(self, family: ModelFamily, prior: Prior | None = None, epsilon=0.2, engine="auto", settings=None, method="quadrature"):
        self.family = family
        self.prior = prior
        self.epsilon = epsilon
        self.engine = engine
        self.settings = settings
        self.method = method

    def fit(self, X, y=None):
        X = self._set_sample(X, y)
        self.bayes_ = BayesPredictiveEstimator(self.family, self.prior, self.engine, self.settings, self.method).fit(X)
        return self

    def discontinuities(self, x1) -> list:
        lo = self.family.x2_support.bounds[0]
        if self.family.x2_support.discrete or not math.isfinite(lo):
            return []
        return [lo + self.epsilon]

    def _mix(self):
        return min(abs(self.epsilon), 1.0)

    def _density(self, x1, x2):
        if self.family.x2_support.discrete:
            w = self._mix()
            top = self.family.x2_support.values[-1]
            return (1 - w) * self.bayes_._density(x1, x2) + w * (np.asarray(x2) == top)
        return self.bayes_._density(x1, np.asarray(x2) - self.epsilon)

    def _cdf(self, x1, t):
        if self.family.x2_support.discrete:
            w = self._mix()
            top = self.family.x2_support.values[-1]
            return (1 - w) * self.bayes_._cdf(x1, t) + w * (np.asarray(t) >= top)
        return self.bayes_._cdf(x1, np.asarray(t) - self.epsilon)

    def _regression(self, x1):
        return self.bayes_._regression(x1) + self.epsilon
