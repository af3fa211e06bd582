"""Built-in model families and their closed-form Bayes estimators.

* :class:`GammaExpFamily` -- X1 ~ Exp(θ), X2 | X1=x1 ~ Exp(θ x1), prior Exp(λ).
* :class:`CoinPairFamily` -- two dependent coin tosses, uniform prior.
* :class:`BivariateNormalFamily` -- N2((θ, θ), σ²[[1, ρ], [ρ, 1]]), prior N(μ, τ²).
* :class:`FiniteTableFamily` -- tabulated finite model for exact enumeration.

The closed forms are derived from the general predictive ratio with exact
conjugate algebra; they are independent of the quadrature engine and serve
as its reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special, stats

from .core import (
    FinitePrior,
    GammaPrior,
    Interval,
    ModelFamily,
    NormalPrior,
    Points,
    Prior,
    SupportError,
    UniformPrior,
    validate_sample,
)

MAX_FINITE_PARAMS = 16
MAX_FINITE_GRID = 8


def _same_prior(a: Prior, b: Prior) -> bool:
    if type(a) is not type(b):
        return False
    for f in fields(a):
        v, w = getattr(a, f.name), getattr(b, f.name)
        if isinstance(v, float) and not math.isclose(v, w, rel_tol=1e-12, abs_tol=0.0):
            return False
        if not isinstance(v, float) and v != w:
            return False
    return True


# ---------------------------------------------------------------------------
# Gamma / exponential family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaExpFamily(ModelFamily):
    """``f_θ(x1, x2) = θ² x1 exp(-θ x1 (1 + x2))`` on ``(0, ∞)²``; prior rate ``lam``."""

    lam: float = 1.0

    name = "gamma"
    param_support = Interval(0.0, math.inf)
    x1_support = Interval(0.0, math.inf)
    x2_support = Interval(0.0, math.inf)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive; got {self.lam}")

    def log_joint_density(self, theta, x1, x2):
        theta, x1, x2 = (np.asarray(v, dtype=float) for v in (theta, x1, x2))
        # logs on the unbroadcast inputs; only the exponent needs the full grid
        with np.errstate(all="ignore"):
            lt = np.where(theta > 0, 2 * np.log(theta), -np.inf)
            l1 = np.where(x1 >= 0, np.log(x1), -np.inf)
            l2 = np.where(x2 >= 0, 0.0, -np.inf)
            val = (lt + l1 + l2) - theta * x1 * (1 + x2)
        return np.where(np.isnan(val), -np.inf, val)

    def marginal1_density(self, theta, x1):
        theta, x1 = np.broadcast_arrays(np.asarray(theta, float), np.asarray(x1, float))
        with np.errstate(all="ignore"):
            return np.where((theta > 0) & (x1 >= 0), theta * np.exp(-theta * x1), 0.0)

    def true_conditional_density(self, theta, x1, x2):
        rate = np.asarray(theta, float) * np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        with np.errstate(all="ignore"):
            return np.where(x2 >= 0, rate * np.exp(-rate * x2), 0.0)

    def true_conditional_cdf(self, theta, x1, t):
        rate = np.asarray(theta, float) * np.asarray(x1, float)
        t = np.asarray(t, float)
        with np.errstate(all="ignore"):
            return np.where(t > 0, -np.expm1(-rate * np.maximum(t, 0.0)), 0.0)

    def true_regression(self, theta, x1):
        return 1.0 / (np.asarray(theta, float) * np.asarray(x1, float))

    def sample(self, theta, rng, size):
        x1 = rng.exponential(1.0 / theta, size=size)
        x2 = rng.exponential(1.0 / (theta * x1))
        return np.column_stack([x1, x2])

    def default_prior(self) -> Prior:
        return GammaPrior(1.0, 1.0 / self.lam)

    def x2_location_scale(self, theta, x1):
        return 0.0, 1.0 / (theta * x1)

    def closed_form(self, X, prior=None):
        if prior is not None and not _same_prior(prior, self.default_prior()):
            raise ValueError("gamma closed form needs the Exp(lam) prior")
        return GammaPredictiveCF(self.lam, validate_sample(self, X))


def _gamma_stats(X):
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    if np.any(X <= 0):
        i = int(np.argmax(np.any(X <= 0, axis=1)))
        raise SupportError(f"pair {i} is not in (0, inf)^2")
    return X.shape[0], math.fsum(X[:, 0] * (1 + X[:, 1]))


def gamma_predictive_scale(X, x1, lam: float) -> float:
    """``λ + x1 + Σ x'_{i1}(1 + x'_{i2})``."""
    if not x1 > 0:
        raise SupportError(f"x1 must be positive; got {x1}")
    _, s = _gamma_stats(X)
    return lam + x1 + s


def gamma_conditional_density_cf(X, x1, x2, lam: float) -> float:
    n, _ = _gamma_stats(X)
    if x2 < 0:
        raise SupportError(f"x2 must be nonnegative; got {x2}")
    a = gamma_predictive_scale(X, x1, lam)
    m = 2 * n + 2
    return math.exp(math.log(m * x1) + m * math.log(a) - (m + 1) * math.log(x1 * x2 + a))


def gamma_conditional_cdf_cf(X, x1, t, lam: float) -> float:
    n, _ = _gamma_stats(X)
    if t <= 0:
        return 0.0
    a = gamma_predictive_scale(X, x1, lam)
    return -math.expm1(-(2 * n + 2) * math.log1p(x1 * t / a))


def gamma_regression_cf(X, x1, lam: float) -> float:
    n, _ = _gamma_stats(X)
    return gamma_predictive_scale(X, x1, lam) / ((2 * n + 1) * x1)


def gamma_predictive_joint_cf(X, x1, x2, lam: float) -> float:
    """``(2n+2)! λ K x1 Πx'_{i1} / (λ + x1(1+x2) + S)^{2n+3}`` with K in closed form."""
    n, s = _gamma_stats(X)
    c = lam + s
    return math.exp(
        math.log((2 * n + 2) * (2 * n + 1) * x1) + (2 * n + 1) * math.log(c) - (2 * n + 3) * math.log(c + x1 * (1 + x2))
    )


class GammaPredictiveCF:
    """Vectorised closed-form predictive objects for :class:`GammaExpFamily`."""

    def __init__(self, lam: float, X: np.ndarray):
        self.lam = lam
        self.n, self.s = (0, 0.0) if X.shape[0] == 0 else _gamma_stats(X)
        self.posterior_mean = (2 * self.n + 1) / (lam + self.s)

    def predictive_scale(self, x1):
        return self.lam + np.asarray(x1, float) + self.s

    def predictive_joint(self, x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        c, n = self.lam + self.s, self.n
        with np.errstate(all="ignore"):
            val = (2 * n + 2) * (2 * n + 1) * x1 * np.exp((2 * n + 1) * np.log(c) - (2 * n + 3) * np.log(c + x1 * (1 + x2)))
        return np.where((x1 >= 0) & (x2 >= 0), val, 0.0)

    def marginal1(self, x1):
        x1 = np.asarray(x1, float)
        c, n = self.lam + self.s, self.n
        return np.where(x1 >= 0, (2 * n + 1) * np.exp((2 * n + 1) * np.log(c) - (2 * n + 2) * np.log(c + x1)), 0.0)

    def conditional_density(self, x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        a, m = self.predictive_scale(x1), 2 * self.n + 2
        with np.errstate(all="ignore"):
            val = m * x1 * np.exp(m * np.log(a) - (m + 1) * np.log(x1 * x2 + a))
        return np.where(x2 >= 0, val, 0.0)

    def conditional_cdf(self, x1, t):
        x1, t = np.broadcast_arrays(np.asarray(x1, float), np.asarray(t, float))
        a = self.predictive_scale(x1)
        with np.errstate(all="ignore"):
            val = -np.expm1(-(2 * self.n + 2) * np.log1p(x1 * np.maximum(t, 0.0) / a))
        return np.where(t > 0, val, 0.0)

    def conditional_quantile(self, x1, q):
        a = self.predictive_scale(x1)
        return a / np.asarray(x1, float) * np.expm1(-np.log1p(-np.asarray(q, float)) / (2 * self.n + 2))

    def regression(self, x1):
        x1 = np.asarray(x1, float)
        return self.predictive_scale(x1) / ((2 * self.n + 1) * x1)


# ---------------------------------------------------------------------------
# Coin-pair family
# ---------------------------------------------------------------------------

# (exponent of θ, exponent of 1-θ) of f_θ(k1, k2)
_COIN_EXPONENTS = {(0, 0): (1, 1), (1, 0): (1, 1), (0, 1): (0, 2), (1, 1): (2, 0)}


@dataclass(frozen=True)
class CoinPairFamily(ModelFamily):
    """X1 ~ Bern(θ); X2 | X1=k1 ~ Bern(θ) if k1 = 1 else Bern(1-θ). Uniform prior."""

    name = "coin"
    param_support = Interval(0.0, 1.0)
    x1_support = Points((0.0, 1.0))
    x2_support = Points((0.0, 1.0))

    @staticmethod
    def _p_heads(theta, k1):
        k1 = np.asarray(k1, float)
        return k1 + (1 - 2 * k1) * (1 - np.asarray(theta, float))

    def log_joint_density(self, theta, x1, x2):
        theta, k1, k2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (theta, x1, x2)))
        with np.errstate(divide="ignore", invalid="ignore"):
            lt, l1t = np.log(theta), np.log1p(-theta)
            val = np.where(k2 == 0, lt + l1t, np.where(k1 == 1, 2 * lt, 2 * l1t))
        ok = np.isin(k1, (0.0, 1.0)) & np.isin(k2, (0.0, 1.0)) & (theta >= 0) & (theta <= 1)
        return np.where(ok, val, -np.inf)

    def marginal1_density(self, theta, x1):
        theta, k1 = np.broadcast_arrays(np.asarray(theta, float), np.asarray(x1, float))
        return np.where(k1 == 1, theta, np.where(k1 == 0, 1 - theta, 0.0))

    def true_conditional_density(self, theta, x1, x2):
        p = self._p_heads(theta, x1)
        x2 = np.asarray(x2, float)
        return np.where(x2 == 1, p, np.where(x2 == 0, 1 - p, 0.0))

    def true_conditional_cdf(self, theta, x1, t):
        p = self._p_heads(theta, x1)
        t = np.asarray(t, float)
        return np.where(t < 0, 0.0, np.where(t < 1, 1 - p, 1.0))

    def true_regression(self, theta, x1):
        return self._p_heads(theta, x1)

    def sample(self, theta, rng, size):
        k1 = (rng.random(size) < theta).astype(float)
        k2 = (rng.random(size) < self._p_heads(theta, k1)).astype(float)
        return np.column_stack([k1, k2])

    def default_prior(self) -> Prior:
        return UniformPrior(0.0, 1.0)

    def x2_location_scale(self, theta, x1):
        return 0.5, 0.5

    def closed_form(self, X, prior=None):
        if prior is not None and not _same_prior(prior, self.default_prior()):
            raise ValueError("coin closed form needs the uniform(0, 1) prior")
        return CoinPredictiveCF(validate_sample(self, X))


class CoinCounts(NamedTuple):
    n00: int
    n01: int
    n10: int
    n11: int
    n_plus0: int
    a: int
    b: int


def coin_counts(X) -> CoinCounts:
    """Cell counts and the Beta exponents ``a = n_{+0} + 2 n11``, ``b = n_{+0} + 2 n01``."""
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    if not np.isin(X, (0.0, 1.0)).all():
        i = int(np.argmax(~np.isin(X, (0.0, 1.0)).all(axis=1)))
        raise SupportError(f"pair {i} is not binary")
    k = X.astype(int)
    n = {(i, j): int(np.sum((k[:, 0] == i) & (k[:, 1] == j))) for i in (0, 1) for j in (0, 1)}
    n_plus0 = n[0, 0] + n[1, 0]
    return CoinCounts(n[0, 0], n[0, 1], n[1, 0], n[1, 1], n_plus0, n_plus0 + 2 * n[1, 1], n_plus0 + 2 * n[0, 1])


def _check_bit(k, what):
    if k not in (0, 1):
        raise SupportError(f"{what} must be 0 or 1; got {k!r}")
    return int(k)


def coin_conditional_pf_cf(X, k1, k2, exact: bool = False):
    """``P*(X2 = k2 | X1 = k1)`` from exact Beta-function ratios.

    The four values are ``(a+1, b+2 | b+1, a+2) / (2n+3)``; with
    ``exact=True`` a :class:`~fractions.Fraction` is returned.
    """
    k1, k2 = _check_bit(k1, "k1"), _check_bit(k2, "k2")
    c = coin_counts(X)
    n = c.n00 + c.n01 + c.n10 + c.n11
    num = {(0, 0): c.a + 1, (0, 1): c.b + 2, (1, 0): c.b + 1, (1, 1): c.a + 2}[k1, k2]
    val = Fraction(num, 2 * n + 3)
    return val if exact else float(val)


def coin_regression_cf(X, k1, exact: bool = False):
    return coin_conditional_pf_cf(X, k1, 1, exact=exact)


def _beta_int(p: int, q: int) -> Fraction:
    """``B(p, q)`` for positive integers, exactly."""
    return Fraction(math.factorial(p - 1) * math.factorial(q - 1), math.factorial(p + q - 1))


def coin_predictive_joint_cf(X, k1, k2, exact: bool = False):
    """``f*(k1, k2) = B(a+α+1, b+β+1) / B(a+1, b+1)`` with the exponents of ``f_θ(k1, k2)``."""
    k1, k2 = _check_bit(k1, "k1"), _check_bit(k2, "k2")
    c = coin_counts(X)
    al, be = _COIN_EXPONENTS[k1, k2]
    val = _beta_int(c.a + al + 1, c.b + be + 1) / _beta_int(c.a + 1, c.b + 1)
    return val if exact else float(val)


class CoinPredictiveCF:
    def __init__(self, X: np.ndarray):
        self.counts = coin_counts(X)
        self.n = X.shape[0]
        c = self.counts
        self.posterior_mean = (c.a + 1) / (2 * self.n + 2)
        d = 2 * self.n + 3
        self._p1 = {0: (c.b + 2) / d, 1: (c.a + 2) / d}

    def _p_heads(self, k1):
        k1 = np.asarray(k1, float)
        return np.where(k1 == 1, self._p1[1], np.where(k1 == 0, self._p1[0], np.nan))

    def predictive_joint(self, x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        out = np.zeros(x1.shape)
        c = self.counts
        for (k1, k2), (al, be) in _COIN_EXPONENTS.items():
            v = math.exp(special.betaln(c.a + al + 1, c.b + be + 1) - special.betaln(c.a + 1, c.b + 1))
            out = np.where((x1 == k1) & (x2 == k2), v, out)
        return out

    def marginal1(self, x1):
        x1 = np.asarray(x1, float)
        return np.where(x1 == 1, self.posterior_mean, np.where(x1 == 0, 1 - self.posterior_mean, 0.0))

    def conditional_density(self, x1, x2):
        p = self._p_heads(x1)
        x2 = np.asarray(x2, float)
        return np.where(x2 == 1, p, np.where(x2 == 0, 1 - p, 0.0))

    def conditional_cdf(self, x1, t):
        p = self._p_heads(x1)
        t = np.asarray(t, float)
        return np.where(t < 0, 0.0, np.where(t < 1, 1 - p, 1.0))

    def regression(self, x1):
        return self._p_heads(x1)


# ---------------------------------------------------------------------------
# Bivariate normal family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BivariateNormalFamily(ModelFamily):
    """``N2((θ, θ), σ² [[1, ρ], [ρ, 1]])`` with known ``σ, ρ``; prior ``N(μ, τ²)``."""

    sigma: float = 1.0
    rho: float = 0.0
    mu: float = 0.0
    tau: float = 1.0

    name = "normal"
    param_support = Interval()
    x1_support = Interval()
    x2_support = Interval()

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0 and -1 < self.rho < 1):
            raise ValueError("need sigma > 0, tau > 0 and |rho| < 1")

    def log_joint_density(self, theta, x1, x2):
        s2, r = self.sigma**2, self.rho
        d1 = np.asarray(x1, float) - theta
        d2 = np.asarray(x2, float) - theta
        q = (d1 * d1 - 2 * r * d1 * d2 + d2 * d2) / (2 * s2 * (1 - r * r))
        return -math.log(2 * math.pi * s2 * math.sqrt(1 - r * r)) - q

    def marginal1_density(self, theta, x1):
        return stats.norm.pdf(x1, loc=theta, scale=self.sigma)

    def _cond(self, theta, x1):
        mean = (1 - self.rho) * np.asarray(theta, float) + self.rho * np.asarray(x1, float)
        return mean, self.sigma * math.sqrt(1 - self.rho**2)

    def true_conditional_density(self, theta, x1, x2):
        m, s = self._cond(theta, x1)
        return stats.norm.pdf(x2, loc=m, scale=s)

    def true_conditional_cdf(self, theta, x1, t):
        m, s = self._cond(theta, x1)
        return stats.norm.cdf(t, loc=m, scale=s)

    def true_regression(self, theta, x1):
        return self._cond(theta, x1)[0]

    def sample(self, theta, rng, size):
        x1 = rng.normal(theta, self.sigma, size=size)
        m, s = self._cond(theta, x1)
        return np.column_stack([x1, rng.normal(m, s)])

    def default_prior(self) -> Prior:
        return NormalPrior(self.mu, self.tau**2)

    def x2_location_scale(self, theta, x1):
        m, s = self._cond(theta, x1)
        return float(m), s

    def closed_form(self, X, prior=None):
        if prior is not None and not _same_prior(prior, self.default_prior()):
            raise ValueError("normal closed form needs the N(mu, tau^2) prior")
        X = validate_sample(self, X)
        return NormalPredictiveCF(normal_predictive_params(X, self.sigma, self.rho, self.mu, self.tau), X, self)


class NormalPosteriorHyper(NamedTuple):
    A1: float
    B1: float
    C1: float
    mean: float
    var: float


def _normal_stats(X):
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    s1 = math.fsum(X[:, 0] + X[:, 1])
    s2 = math.fsum(X[:, 0] ** 2 + X[:, 1] ** 2)
    p = math.fsum(X[:, 0] * X[:, 1])
    return X.shape[0], s1, s2, p


def normal_posterior_hyper(X, sigma, rho, mu, tau) -> NormalPosteriorHyper:
    """Completed square ``A1 θ² - B1 θ + C1`` of the log posterior kernel."""
    n, s1, s2, p = _normal_stats(X)
    s2_, t2 = sigma**2, tau**2
    A1 = n / (s2_ * (1 + rho)) + 1 / (2 * t2)
    B1 = s1 / (s2_ * (1 + rho)) + mu / t2
    C1 = (s2 - 2 * rho * p) / (2 * s2_ * (1 - rho**2)) + mu**2 / (2 * t2)
    return NormalPosteriorHyper(A1, B1, C1, B1 / (2 * A1), 1 / (2 * A1))


def normal_quadratic_coefficients(X, sigma, rho, mu, tau):
    """``(A3, B3, C3)``: coefficients of ``x1²`` (= of ``x2²``), ``x1 x2`` and ``x1`` (= ``x2``)
    in the exponent of the predictive density, after integrating θ out.

    Integrating ``exp{-(A2 θ² - B2 θ + C2)}`` over θ leaves ``C2 - B2²/(4 A2)``
    with ``A2 = (n+1)/(σ²(1+ρ)) + 1/(2τ²)``, ``B2`` linear in ``x1 + x2``.
    """
    n, s1, _, _ = _normal_stats(X)
    s2_, t2 = sigma**2, tau**2
    A2 = (n + 1) / (s2_ * (1 + rho)) + 1 / (2 * t2)
    u = 1 / (s2_ * (1 + rho))  # d B2 / d x1
    b0 = s1 * u + mu / t2  # B2 at x = 0
    A3 = 1 / (2 * s2_ * (1 - rho**2)) - u * u / (4 * A2)
    B3 = -rho / (s2_ * (1 - rho**2)) - 2 * u * u / (4 * A2)
    C3 = -2 * u * b0 / (4 * A2)
    return A3, B3, C3


def normal_predictive_params(X, sigma, rho, mu, tau):
    """``(ρ1, σ1², m1)`` of the bivariate normal posterior predictive."""
    A3, B3, C3 = normal_quadratic_coefficients(X, sigma, rho, mu, tau)
    rho1 = -B3 / (2 * A3)
    cond_var = 1 / (2 * A3)
    sigma1_sq = cond_var / (1 - rho1**2)
    m1 = -C3 / (2 * A3 * (1 - rho1))
    return rho1, sigma1_sq, m1


def normal_conditional_cf(params, x1):
    """Mean and variance of the predictive conditional of X2 given X1 = x1."""
    rho1, sigma1_sq, m1 = params
    return (1 - rho1) * m1 + rho1 * np.asarray(x1, float), sigma1_sq * (1 - rho1**2)


class NormalPredictiveCF:
    def __init__(self, params, X, family: BivariateNormalFamily):
        self.params = params
        self.rho1, self.sigma1_sq, self.m1 = params
        hyper = normal_posterior_hyper(X, family.sigma, family.rho, family.mu, family.tau)
        self.posterior_mean = hyper.mean

    def predictive_joint(self, x1, x2):
        s2, r = self.sigma1_sq, self.rho1
        d1 = np.asarray(x1, float) - self.m1
        d2 = np.asarray(x2, float) - self.m1
        q = (d1 * d1 - 2 * r * d1 * d2 + d2 * d2) / (2 * s2 * (1 - r * r))
        return np.exp(-q) / (2 * math.pi * s2 * math.sqrt(1 - r * r))

    def marginal1(self, x1):
        return stats.norm.pdf(x1, loc=self.m1, scale=math.sqrt(self.sigma1_sq))

    def _cond(self, x1):
        m, v = normal_conditional_cf(self.params, x1)
        return m, math.sqrt(v)

    def conditional_density(self, x1, x2):
        m, s = self._cond(x1)
        return stats.norm.pdf(x2, loc=m, scale=s)

    def conditional_cdf(self, x1, t):
        m, s = self._cond(x1)
        return stats.norm.cdf(t, loc=m, scale=s)

    def conditional_quantile(self, x1, q):
        m, s = self._cond(x1)
        return stats.norm.ppf(q, loc=m, scale=s)

    def regression(self, x1):
        return self._cond(x1)[0]


# ---------------------------------------------------------------------------
# Tabulated finite family
# ---------------------------------------------------------------------------


def _lookup(values: np.ndarray, x):
    x = np.asarray(x, dtype=float)
    idx = np.clip(np.searchsorted(values, x), 0, len(values) - 1)
    return idx, values[idx] == x


@dataclass(frozen=True, eq=False)
class FiniteTableFamily(ModelFamily):
    """Finite parameter set with a probability table over a finite ``Ω1 × Ω2`` grid.

    ``table[k, i, j] = R_{θ_k}({(x1_values[i], x2_values[j])})``.
    """

    thetas: tuple
    weights: tuple
    x1_values: tuple
    x2_values: tuple
    table: np.ndarray = field(repr=False)
    label: str = "finite"

    name = "finite"

    def __post_init__(self):
        th = np.asarray(self.thetas, float)
        x1 = np.asarray(self.x1_values, float)
        x2 = np.asarray(self.x2_values, float)
        tab = np.asarray(self.table, float)
        for what, v in (("parameter", th), ("x1", x1), ("x2", x2)):
            if np.any(np.diff(v) <= 0):
                raise ValueError(f"{what} values must be strictly increasing")
        if len(th) > MAX_FINITE_PARAMS or len(x1) > MAX_FINITE_GRID or len(x2) > MAX_FINITE_GRID:
            raise ValueError(f"finite family exceeds caps (|Θ|≤{MAX_FINITE_PARAMS}, |Ω1|,|Ω2|≤{MAX_FINITE_GRID})")
        if tab.shape != (len(th), len(x1), len(x2)):
            raise ValueError(f"table shape {tab.shape} does not match grid {(len(th), len(x1), len(x2))}")
        if np.any(tab < 0):
            raise ValueError("table probabilities must be nonnegative")
        sums = tab.sum(axis=(1, 2))
        if np.any(np.abs(sums - 1) > 1e-12):
            k = int(np.argmax(np.abs(sums - 1)))
            raise ValueError(f"table for parameter index {k} sums to {sums[k]!r}")
        FinitePrior(tuple(th), tuple(self.weights))  # validates the weights
        tab.setflags(write=False)
        object.__setattr__(self, "table", tab)
        object.__setattr__(self, "_th", th)
        object.__setattr__(self, "_x1", x1)
        object.__setattr__(self, "_x2", x2)
        object.__setattr__(self, "_marg", tab.sum(axis=2))
        object.__setattr__(self, "_cum", np.cumsum(tab, axis=2))

    @property
    def param_support(self):
        return Points(self.thetas)

    @property
    def x1_support(self):
        return Points(self.x1_values)

    @property
    def x2_support(self):
        return Points(self.x2_values)

    @property
    def cell_count(self) -> int:
        return len(self.x1_values) * len(self.x2_values)

    def log_joint_density(self, theta, x1, x2):
        (k, vk), (i, vi), (j, vj) = _lookup(self._th, theta), _lookup(self._x1, x1), _lookup(self._x2, x2)
        k, i, j, ok = np.broadcast_arrays(k, i, j, vk & vi & vj)
        with np.errstate(divide="ignore"):
            return np.where(ok, np.log(self.table[k, i, j]), -np.inf)

    def marginal1_density(self, theta, x1):
        (k, vk), (i, vi) = _lookup(self._th, theta), _lookup(self._x1, x1)
        k, i, ok = np.broadcast_arrays(k, i, vk & vi)
        return np.where(ok, self._marg[k, i], 0.0)

    def true_conditional_cdf(self, theta, x1, t):
        (k, vk), (i, vi) = _lookup(self._th, theta), _lookup(self._x1, x1)
        c = np.searchsorted(self._x2, np.asarray(t, float), side="right")
        k, i, c, ok = np.broadcast_arrays(k, i, c, vk & vi)
        num = np.where(c > 0, self._cum[k, i, np.maximum(c - 1, 0)], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(ok, num / self._marg[k, i], np.nan)

    def true_regression(self, theta, x1):
        (k, vk), (i, vi) = _lookup(self._th, theta), _lookup(self._x1, x1)
        k, i, ok = np.broadcast_arrays(k, i, vk & vi)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(ok, (self.table @ self._x2)[k, i] / self._marg[k, i], np.nan)

    def sample(self, theta, rng, size):
        k = int(_lookup(self._th, theta)[0])
        cells = rng.choice(self.cell_count, size=size, p=self.table[k].ravel())
        i, j = np.unravel_index(cells, self.table.shape[1:])
        return np.column_stack([self._x1[i], self._x2[j]])

    def default_prior(self) -> Prior:
        return FinitePrior(self.thetas, self.weights)

    def x2_location_scale(self, theta, x1):
        return float(self._x2.mean()), float(max(np.ptp(self._x2), 1.0))


def parse_finite_family(text: str, label: str = "finite") -> FiniteTableFamily:
    """Parse the plain-text table format.

    Lines ``param,<index>,<theta>,<prior weight>`` declare the parameter
    points; every other non-comment line is ``<index>,<x1>,<x2>,<probability>``.
    Grid cells that are never listed have probability 0.
    """
    params: dict[int, tuple[float, float]] = {}
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            if parts[0] == "param":
                if len(parts) != 4:
                    raise ValueError("expected param,<index>,<theta>,<weight>")
                params[int(parts[1])] = (float(parts[2]), float(parts[3]))
            else:
                if len(parts) != 4:
                    raise ValueError("expected <index>,<x1>,<x2>,<probability>")
                rows.append((int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if not params:
        raise ValueError("no param lines")
    order = sorted(params, key=lambda k: params[k][0])
    pos = {k: p for p, k in enumerate(order)}
    x1v = sorted({r[1] for r in rows})
    x2v = sorted({r[2] for r in rows})
    tab = np.zeros((len(order), len(x1v), len(x2v)))
    for idx, a, b, pr in rows:
        if idx not in pos:
            raise ValueError(f"row refers to undeclared parameter index {idx}")
        tab[pos[idx], x1v.index(a), x2v.index(b)] += pr
    return FiniteTableFamily(
        thetas=tuple(params[k][0] for k in order),
        weights=tuple(params[k][1] for k in order),
        x1_values=tuple(x1v),
        x2_values=tuple(x2v),
        table=tab,
        label=label,
    )


def format_finite_family(family: FiniteTableFamily) -> str:
    lines = ["# param,<index>,<theta>,<prior weight>"]
    for k, (t, w) in enumerate(zip(family.thetas, family.weights)):
        lines.append(f"param,{k},{float(t)!r},{float(w)!r}")
    lines.append("# <index>,<x1>,<x2>,<probability>")
    for k in range(len(family.thetas)):
        for i, a in enumerate(family.x1_values):
            for j, b in enumerate(family.x2_values):
                p = family.table[k, i, j]
                if p:
                    lines.append(f"{k},{float(a)!r},{float(b)!r},{float(p)!r}")
    return "\n".join(lines) + "\n"


def load_finite_family(path: str | Path) -> FiniteTableFamily:
    path = Path(path)
    return parse_finite_family(path.read_text(), label=path.stem)


SHIPPED_FINITE_FAMILIES = ("two_point", "coin_grid", "ternary")


def shipped_family(name: str) -> FiniteTableFamily:
    """One of the bundled finite families: ``two_point``, ``coin_grid``, ``ternary``."""
    if name not in SHIPPED_FINITE_FAMILIES:
        raise KeyError(f"unknown shipped family {name!r}; choose from {SHIPPED_FINITE_FAMILIES}")
    text = resources.files("postpred.data").joinpath(f"{name}.csv").read_text()
    return parse_finite_family(text, label=name)


def make_family(name: str, /, **hyper) -> ModelFamily:
    """Build a family from a selector name and keyword hyperparameters."""
    if name == "gamma":
        return GammaExpFamily(**{k: float(v) for k, v in hyper.items()})
    if name == "coin":
        if hyper:
            raise TypeError(f"coin family takes no hyperparameters; got {sorted(hyper)}")
        return CoinPairFamily()
    if name == "normal":
        return BivariateNormalFamily(**{k: float(v) for k, v in hyper.items()})
    if name == "finite":
        if set(hyper) == {"path"}:
            return load_finite_family(hyper["path"])
        if set(hyper) == {"name"}:
            return shipped_family(hyper["name"])
        raise TypeError("finite family needs exactly one of path=... or name=...")
    raise KeyError(f"unknown family {name!r}")
