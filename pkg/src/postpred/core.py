"""Shared domain types: supports, priors, the model-family contract, samples.

Parameters are plain floats and samples are ``(n, 2)`` float arrays; the
classes here only carry what needs behaviour (supports, priors, families).
"""

from __future__ import annotations

import abc
import functools
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import stats


class SupportError(ValueError):
    """An observation or parameter lies outside its declared support."""


# ---------------------------------------------------------------------------
# Supports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """Open interval ``(lo, hi)``; infinite ends allowed."""

    lo: float = -math.inf
    hi: float = math.inf

    discrete = False

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x < self.hi)

    @property
    def bounds(self) -> Tuple[float, float]:
        return self.lo, self.hi

    def __str__(self) -> str:
        return f"({self.lo:g}, {self.hi:g})"


@dataclass(frozen=True)
class Points:
    """Finite support; ``values`` are kept sorted."""

    values: Tuple[float, ...]

    discrete = True

    def __post_init__(self):
        vals = tuple(sorted(float(v) for v in self.values))
        if len(set(vals)) != len(vals):
            raise ValueError("support points must be distinct")
        object.__setattr__(self, "values", vals)

    def contains(self, x):
        return np.isin(np.asarray(x, dtype=float), self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def bounds(self) -> Tuple[float, float]:
        return self.values[0], self.values[-1]

    def __len__(self) -> int:
        return len(self.values)

    def __str__(self) -> str:
        return "{" + ", ".join(f"{v:g}" for v in self.values) + "}"


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


class Prior(abc.ABC):
    """Prior distribution over a scalar parameter."""

    is_finite = False

    @property
    @abc.abstractmethod
    def support(self) -> Interval | Points:
        ...

    @abc.abstractmethod
    def logpdf(self, theta):
        """Log density (w.r.t. Lebesgue, or counting measure if finite)."""

    def pdf(self, theta):
        return np.exp(self.logpdf(theta))

    @abc.abstractmethod
    def sample(self, rng: np.random.Generator, size=None):
        ...

    @abc.abstractmethod
    def mean(self) -> float:
        ...

    @abc.abstractmethod
    def truncated_support(self, mass: float) -> Tuple[float, float]:
        """Bounded interval carrying all but ``mass`` of the prior per open tail."""


@dataclass(frozen=True)
class GammaPrior(Prior):
    """Gamma prior in shape-scale form, density ``θ^(α-1) e^(-θ/β) / (Γ(α) β^α)``."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"gamma prior needs shape>0, scale>0; got {self.shape}, {self.scale}")

    @functools.cached_property
    def _dist(self):
        return stats.gamma(a=self.shape, scale=self.scale)

    @property
    def support(self) -> Interval:
        return Interval(0.0, math.inf)

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(theta > 0, self._dist.logpdf(np.where(theta > 0, theta, 1.0)), -np.inf)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size=size)

    def mean(self) -> float:
        return self.shape * self.scale

    def truncated_support(self, mass):
        return 0.0, float(self._dist.isf(mass))


@dataclass(frozen=True)
class NormalPrior(Prior):
    """Normal prior ``N(mean, var)``."""

    loc: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError(f"normal prior needs var>0; got {self.var}")

    @functools.cached_property
    def _dist(self):
        return stats.norm(loc=self.loc, scale=math.sqrt(self.var))

    @property
    def support(self) -> Interval:
        return Interval()

    def logpdf(self, theta):
        return self._dist.logpdf(theta)

    def sample(self, rng, size=None):
        return rng.normal(self.loc, math.sqrt(self.var), size=size)

    def mean(self) -> float:
        return self.loc

    def truncated_support(self, mass):
        d = self._dist
        return float(d.ppf(mass)), float(d.isf(mass))


@dataclass(frozen=True)
class UniformPrior(Prior):
    """Uniform prior on ``(lo, hi)``; the default is the unit interval."""

    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("uniform prior needs hi > lo")

    @property
    def support(self) -> Interval:
        return Interval(self.lo, self.hi)

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        inside = (theta >= self.lo) & (theta <= self.hi)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def truncated_support(self, mass):
        return self.lo, self.hi


@dataclass(frozen=True)
class FinitePrior(Prior):
    """Prior with finitely many support points."""

    points: Tuple[float, ...]
    weights: Tuple[float, ...]

    is_finite = True

    def __post_init__(self):
        pts = tuple(float(p) for p in np.atleast_1d(self.points))
        w = tuple(float(x) for x in np.atleast_1d(self.weights))
        if len(pts) != len(w) or not pts:
            raise ValueError("finite prior needs as many weights as points (at least one)")
        if len(set(pts)) != len(pts):
            raise ValueError("finite prior points must be distinct")
        if any(not math.isfinite(x) or x < 0 for x in w):
            raise ValueError("finite prior weights must be nonnegative")
        if abs(math.fsum(w) - 1.0) > 1e-9:
            raise ValueError(f"finite prior weights sum to {math.fsum(w)!r}, not 1")
        order = sorted(range(len(pts)), key=pts.__getitem__)
        object.__setattr__(self, "points", tuple(pts[i] for i in order))
        object.__setattr__(self, "weights", tuple(w[i] for i in order))

    @classmethod
    def point_mass(cls, theta: float) -> "FinitePrior":
        return cls((theta,), (1.0,))

    @property
    def support(self) -> Points:
        return Points(self.points)

    @property
    def point_array(self) -> np.ndarray:
        return np.asarray(self.points)

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights)

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, -np.inf)
        with np.errstate(divide="ignore"):
            for p, w in zip(self.points, self.weights):
                out = np.where(theta == p, math.log(w) if w > 0 else -np.inf, out)
        return out

    def sample(self, rng, size=None):
        return rng.choice(self.point_array, size=size, p=self.weight_array)

    def mean(self) -> float:
        return math.fsum(p * w for p, w in zip(self.points, self.weights))

    def truncated_support(self, mass):
        return self.points[0], self.points[-1]


# ---------------------------------------------------------------------------
# Model families
# ---------------------------------------------------------------------------


class ModelFamily(abc.ABC):
    """Parametric joint model for one observation pair ``(x1, x2)``.

    Every density method broadcasts over its array arguments, so passing
    ``theta[:, None]`` against ``x[None, :]`` yields a node-by-point table.
    Density values outside the support are 0; the boundary of an open
    support is evaluated by continuity.
    """

    name = "family"
    param_support: Interval | Points
    x1_support: Interval | Points
    x2_support: Interval | Points

    @abc.abstractmethod
    def log_joint_density(self, theta, x1, x2):
        ...

    def joint_density(self, theta, x1, x2):
        return np.exp(self.log_joint_density(theta, x1, x2))

    @abc.abstractmethod
    def marginal1_density(self, theta, x1):
        ...

    def true_conditional_density(self, theta, x1, x2):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.joint_density(theta, x1, x2) / self.marginal1_density(theta, x1)

    @abc.abstractmethod
    def true_conditional_cdf(self, theta, x1, t):
        ...

    @abc.abstractmethod
    def true_regression(self, theta, x1):
        ...

    @abc.abstractmethod
    def sample(self, theta: float, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` pairs from ``R_θ``; X1 from its marginal, then X2 given X1."""

    @abc.abstractmethod
    def default_prior(self) -> Prior:
        ...

    def x2_location_scale(self, theta: float, x1: float) -> Tuple[float, float]:
        """Rough centre and spread of X2 given X1, used to shape quadrature maps."""
        return 0.0, 1.0

    def closed_form(self, X, prior: Prior | None = None):
        """Closed-form predictive objects for the conjugate prior, if any."""
        raise NotImplementedError(f"{self.name} family has no closed-form predictive")

    def has_closed_form(self, prior: Prior | None = None) -> bool:
        try:
            self.closed_form(np.empty((0, 2)), prior)
        except (NotImplementedError, ValueError):
            return False
        return True


def validate_param(family: ModelFamily, theta: float) -> float:
    theta = float(theta)
    supp = family.param_support
    if not math.isfinite(theta) or not bool(supp.contains(theta)):
        raise SupportError(f"parameter {theta!r} outside {supp}")
    return theta


def validate_sample(family: ModelFamily, X) -> np.ndarray:
    """Coerce ``X`` to an ``(n, 2)`` float array and check it against the supports.

    ``n = 0`` is legal. Violations are rejected, never clamped.
    """
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.empty((0, 2))
    if X.ndim == 1 and X.shape[0] == 2:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != 2:
        raise SupportError(f"sample must have shape (n, 2); got {X.shape}")
    for j, supp in enumerate((family.x1_support, family.x2_support)):
        col = X[:, j]
        bad = ~np.isfinite(col) | ~supp.contains(col)
        if bad.any():
            i = int(np.argmax(bad))
            raise SupportError(
                f"pair {i}, coordinate x{j + 1}={float(col[i])!r} outside {supp} for the {family.name} family"
            )
    return X


def log_joint_sample_density(family: ModelFamily, theta, X) -> np.ndarray:
    """``Σ_i log f_θ(x'_i)``, vectorised over ``theta``."""
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    theta = np.asarray(theta, dtype=float)
    if X.shape[0] == 0:
        return np.zeros(theta.shape)
    vals = family.log_joint_density(theta[..., None], X[:, 0], X[:, 1])
    return vals.sum(axis=-1)


def joint_sample_density(family: ModelFamily, theta: float, X) -> float:
    """Density of the n-sample ``x'`` under ``R_θ^n``; 1 for the empty sample."""
    X = validate_sample(family, X)
    theta = validate_param(family, theta)
    return float(np.exp(log_joint_sample_density(family, theta, X)))


def sample_param(prior: Prior, rng: np.random.Generator) -> float:
    return float(prior.sample(rng))


def sample_pair(family: ModelFamily, theta: float, rng: np.random.Generator) -> np.ndarray:
    return family.sample(validate_param(family, theta), rng, 1)[0]
