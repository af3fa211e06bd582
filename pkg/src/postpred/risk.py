"""Losses for the four estimation targets and a Monte-Carlo Bayes-risk harness.

Each replication draws θ from the prior, an n-sample and ``x1_per_rep``
conditioning points from ``R_θ``, fits every estimator on the same draw
(paired design) and averages each loss over the conditioning points.
Replication ``r`` uses the substream ``SeedSequence(seed, spawn_key=(r,))``,
so results do not depend on how replications are spread across workers.
"""

from __future__ import annotations

import enum
import hashlib
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from sklearn.base import clone

from .core import ModelFamily, Prior
from .estimators import BayesPredictiveEstimator, PerturbedBayesEstimator, PlugInEstimator, PriorPredictiveEstimator
from .integrate import DEFAULT_SETTINGS, QuadratureSettings, line_integral

LINF_GRID = 512
LINF_REFINE = 64
LINF_QUANTILE = 1e-4
MAX_FAILURE_FRACTION = 0.01


class LossKind(str, enum.Enum):
    SQ_TV = "sq_total_variation"
    SQ_L1 = "sq_L1_density"
    SQ_LINF = "sq_Linf_cdf"
    SQ_ERROR = "sq_error_regression"


class RiskHarnessError(RuntimeError):
    """Too many replications failed."""


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _scan_grid(lo, hi, loc, scale, size=257):
    if math.isfinite(lo) and math.isfinite(hi):
        return np.linspace(lo, hi, size)
    if math.isfinite(lo):
        u = np.linspace(0.0, 1.0, size)[:-1]
        return lo + scale * u / (1.0 - u)
    if math.isfinite(hi):
        u = np.linspace(0.0, 1.0, size)[:-1]
        return hi - scale * u[::-1] / (1.0 - u[::-1])
    v = np.linspace(-1.0, 1.0, size)[1:-1]
    return loc + scale * v / (1.0 - v * v)


def l1_distance(p: Callable, q: Callable, domain, settings: QuadratureSettings = DEFAULT_SETTINGS, loc=0.0, scale=1.0, breakpoints=()) -> float:
    """``∫ |p - q|`` over ``domain``; the domain is split where ``p - q`` changes sign
    and at the given ``breakpoints`` (known jumps)."""
    lo, hi = float(domain[0]), float(domain[1])

    def d(t):
        return np.asarray(p(t), dtype=float) - np.asarray(q(t), dtype=float)

    grid = _scan_grid(lo, hi, loc, scale)
    pv, qv = np.asarray(p(grid), dtype=float), np.asarray(q(grid), dtype=float)
    vals = pv - qv
    # sign flips inside round-off are not crossings worth locating
    loud = np.abs(vals) > 64 * np.finfo(float).eps * np.maximum(np.abs(pv), np.abs(qv))
    cuts = []
    for i in np.nonzero((vals[:-1] * vals[1:] < 0) & loud[:-1] & loud[1:])[0]:
        a, b = grid[i], grid[i + 1]
        cuts.append(optimize.brentq(lambda t: float(d(np.array([t]))[0]), a, b, xtol=1e-12 * max(1.0, abs(a))))
    res = line_integral(lambda t: np.abs(d(t)), (lo, hi), settings, loc, scale, breakpoints=[*cuts, *breakpoints])
    return res.value


def loss_sq_tv(est_density: Callable, true_density: Callable, domain, settings=DEFAULT_SETTINGS, loc=0.0, scale=1.0, points=None, breakpoints=()) -> float:
    """Squared total variation, ``(½ ∫|p - q|)²``; exact half-sum when ``points`` is given."""
    if points is not None:
        pts = np.asarray(points, dtype=float)
        return (0.5 * math.fsum(np.abs(np.asarray(est_density(pts)) - np.asarray(true_density(pts))))) ** 2
    return (0.5 * l1_distance(est_density, true_density, domain, settings, loc, scale, breakpoints)) ** 2


def loss_sq_l1(est_density: Callable, true_density: Callable, domain, settings=DEFAULT_SETTINGS, loc=0.0, scale=1.0, points=None, breakpoints=()) -> float:
    """Squared L1 distance between densities (probability functions when ``points`` is given)."""
    return 4.0 * loss_sq_tv(est_density, true_density, domain, settings, loc, scale, points, breakpoints)


def _quantile(cdf: Callable, probs, lo, hi, loc, scale, iters: int = 30):
    """Upper bracket of the ``probs`` quantiles of ``cdf``, by vectorised bisection."""
    probs = np.asarray(probs, dtype=float)
    a = np.full(probs.shape, lo if math.isfinite(lo) else loc - scale)
    b = np.full(probs.shape, hi if math.isfinite(hi) else loc + scale)
    if not math.isfinite(lo):
        for _ in range(60):
            move = np.asarray(cdf(a)) >= probs
            if not move.any():
                break
            a = np.where(move, loc - 2 * (loc - a), a)
    if not math.isfinite(hi):
        for _ in range(60):
            move = np.asarray(cdf(b)) < probs
            if not move.any():
                break
            b = np.where(move, loc + 2 * (b - loc), b)
    for _ in range(iters):
        m = 0.5 * (a + b)
        below = np.asarray(cdf(m)) < probs
        a = np.where(below, m, a)
        b = np.where(below, b, m)
    return b


def quantile_range(cdf: Callable, domain, loc=0.0, scale=1.0):
    """The ``[1e-4, 1 - 1e-4]`` quantile range used to place the sup-distance grid."""
    q = _quantile(cdf, [LINF_QUANTILE, 1 - LINF_QUANTILE], float(domain[0]), float(domain[1]), loc, scale)
    return float(q[0]), float(q[1])


def loss_sq_linf(est_cdf: Callable, true_cdf: Callable, domain, loc=0.0, scale=1.0, points=None, true_range=None) -> float:
    """Squared sup distance between CDFs.

    Continuous: max over a 512-point grid spanning the union of both
    distributions' [1e-4, 1 - 1e-4] quantile ranges, plus 64 refinement
    points between the neighbours of the grid argmax. Discrete: exact, on
    the support points. ``true_range`` reuses a precomputed quantile range
    of ``true_cdf``.
    """
    if points is not None:
        pts = np.asarray(points, dtype=float)
        F, G = np.asarray(est_cdf(pts), float), np.asarray(true_cdf(pts), float)
        _check_cdf(F)
        _check_cdf(G)
        return float(np.max(np.abs(F - G))) ** 2
    qa = quantile_range(est_cdf, domain, loc, scale)
    qb = true_range if true_range is not None else quantile_range(true_cdf, domain, loc, scale)
    a, b = min(qa[0], qb[0]), max(qa[1], qb[1])
    grid = np.linspace(a, b, LINF_GRID)
    F, G = np.asarray(est_cdf(grid), float), np.asarray(true_cdf(grid), float)
    _check_cdf(F)
    _check_cdf(G)
    diff = np.abs(F - G)
    i = int(np.argmax(diff))
    fine = np.linspace(grid[max(i - 1, 0)], grid[min(i + 1, LINF_GRID - 1)], LINF_REFINE)
    best = max(float(diff[i]), float(np.max(np.abs(np.asarray(est_cdf(fine)) - np.asarray(true_cdf(fine))))))
    return best**2


def _check_cdf(F):
    if np.any(np.diff(F) < -1e-9):
        raise ValueError("CDF values decrease along the grid")


def loss_sq_error(est: float, truth: float) -> float:
    return (float(est) - float(truth)) ** 2


# ---------------------------------------------------------------------------
# Competitors
# ---------------------------------------------------------------------------

_PERTURBED = re.compile(r"perturbed_bayes\(([^)]*)\)$")


def competitor(kind: str, family: ModelFamily, prior: Prior | None = None, engine="auto", settings=None, method="mixture"):
    """Unfitted estimator for ``kind``.

    Kinds: ``bayes``, ``plug_in_posterior_mean``, ``plug_in_mle``,
    ``prior_predictive``, ``perturbed_bayes(eps)``.
    """
    if kind == "bayes":
        return BayesPredictiveEstimator(family, prior, engine, settings, method)
    if kind == "plug_in_posterior_mean":
        return PlugInEstimator(family, prior, "posterior_mean", engine, settings)
    if kind == "plug_in_mle":
        return PlugInEstimator(family, prior, "mle", engine, settings)
    if kind == "prior_predictive":
        return PriorPredictiveEstimator(family, prior, engine, settings, method)
    m = _PERTURBED.match(kind)
    if m:
        return PerturbedBayesEstimator(family, prior, float(m.group(1)), engine, settings, method)
    raise ValueError(f"unknown estimator kind {kind!r}")


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiskReport:
    estimator: str
    loss: str
    n: int
    reps: int
    mean: float
    se: float
    failed: int
    seeds_digest: str

    HEADER = "estimator,loss,n,reps,mean,se,failed,seeds_digest"

    def to_line(self) -> str:
        return f"{self.estimator},{self.loss},{self.n},{self.reps},{self.mean:.12g},{self.se:.12g},{self.failed},{self.seeds_digest}"

    @classmethod
    def from_line(cls, line: str) -> "RiskReport":
        parts = line.strip().split(",")
        if len(parts) != 8:
            raise ValueError(f"expected 8 fields, got {len(parts)}")
        est, loss, n, reps, mean, se, failed, digest = parts
        return cls(est, loss, int(n), int(reps), float(mean), float(se), int(failed), digest)


def _substream(seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(r,))


def seeds_digest(seed: int, reps: int) -> str:
    h = hashlib.sha256()
    for r in range(reps):
        h.update(_substream(seed, r).generate_state(4).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class _Job:
    family: ModelFamily
    prior: Prior
    estimators: tuple
    losses: tuple
    n: int
    x1_per_rep: int
    seed: int
    settings: QuadratureSettings


@dataclass(frozen=True)
class _Point:
    """Truth at one conditioning point, shared by every estimator."""

    theta: float
    x1: float
    loc: float
    scale: float
    points: np.ndarray | None
    true_range: tuple | None


def _truth_point(family: ModelFamily, theta: float, x1: float, losses) -> _Point:
    supp = family.x2_support
    loc, scale = family.x2_location_scale(theta, x1)
    if not (math.isfinite(scale) and scale > 0):
        scale = 1.0
    rng_ = None
    if LossKind.SQ_LINF in losses and not supp.discrete:
        rng_ = quantile_range(lambda u: family.true_conditional_cdf(theta, x1, u), supp.bounds, loc, scale)
    return _Point(theta, x1, float(loc), float(scale), supp.array if supp.discrete else None, rng_)


def _evaluate(est, family: ModelFamily, pt: _Point, losses, settings):
    """Losses of one fitted estimator at one conditioning point."""
    supp = family.x2_support
    theta, x1, loc, scale, pts = pt.theta, pt.x1, pt.loc, pt.scale, pt.points
    out = []
    l1 = None
    for kind in losses:
        if kind is LossKind.SQ_ERROR:
            out.append(loss_sq_error(est._regression(x1), family.true_regression(theta, x1)))
        elif kind in (LossKind.SQ_TV, LossKind.SQ_L1):
            if l1 is None:
                l1 = 2.0 * math.sqrt(
                    loss_sq_tv(
                        lambda u: est._density(x1, np.asarray(u, dtype=float)),
                        lambda u: family.true_conditional_density(theta, x1, u),
                        supp.bounds,
                        settings,
                        loc,
                        scale,
                        pts,
                        est.discontinuities(x1),
                    )
                )
            out.append((0.5 * l1) ** 2 if kind is LossKind.SQ_TV else l1**2)
        else:
            out.append(
                loss_sq_linf(
                    lambda u: est._cdf(x1, np.asarray(u, dtype=float)),
                    lambda u: family.true_conditional_cdf(theta, x1, u),
                    supp.bounds,
                    loc,
                    scale,
                    pts,
                    pt.true_range,
                )
            )
    return out


def _replication(job: _Job, r: int) -> np.ndarray:
    """``(estimators, losses)`` array of mean losses for replication ``r``; NaN rows mark failures."""
    rng = np.random.default_rng(_substream(job.seed, r))
    theta = float(job.prior.sample(rng))
    X = job.family.sample(theta, rng, job.n) if job.n else np.empty((0, 2))
    x1s = job.family.sample(theta, rng, job.x1_per_rep)[:, 0]
    out = np.full((len(job.estimators), len(job.losses)), np.nan)
    pts = [_truth_point(job.family, theta, float(a), job.losses) for a in x1s]
    for e, template in enumerate(job.estimators):
        try:
            est = clone(template).fit(X)
            vals = [_evaluate(est, job.family, pt, job.losses, job.settings) for pt in pts]
            out[e] = np.mean(np.asarray(vals, dtype=float), axis=0)
        except (ArithmeticError, ValueError, RuntimeError):
            pass
    return out


def _run_block(job: _Job, start: int, stop: int) -> np.ndarray:
    return np.stack([_replication(job, r) for r in range(start, stop)])


@dataclass
class RiskComparison:
    names: tuple
    losses: tuple
    n: int
    reps: int
    seed: int
    values: np.ndarray  # (reps, estimators, losses)
    digest: str

    def report(self, name: str, loss: LossKind) -> RiskReport:
        e, k = self.names.index(name), self.losses.index(loss)
        col = self.values[:, e, k]
        ok = col[~np.isnan(col)]
        mean = math.fsum(ok) / len(ok)
        se = float(np.sqrt(math.fsum((ok - mean) ** 2) / (len(ok) - 1) / len(ok))) if len(ok) > 1 else 0.0
        return RiskReport(name, loss.value, self.n, self.reps, mean, se, int(len(col) - len(ok)), self.digest)

    def reports(self) -> list:
        return [self.report(nm, k) for k in self.losses for nm in self.names]

    def margin(self, name: str, baseline: str, loss: LossKind):
        """Paired ``risk(name) - risk(baseline)`` and its standard error."""
        k = self.losses.index(loss)
        return paired_difference(self.values[:, self.names.index(name), k], self.values[:, self.names.index(baseline), k])

    def table(self) -> str:
        return "\n".join([RiskReport.HEADER] + [r.to_line() for r in self.reports()]) + "\n"


def paired_difference(a, b):
    """Mean and standard error of ``a - b`` over replications where both succeeded."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[~np.isnan(d)]
    if len(d) < 2:
        return math.nan, math.nan
    mean = math.fsum(d) / len(d)
    return mean, float(np.sqrt(math.fsum((d - mean) ** 2) / (len(d) - 1) / len(d)))


def compare_estimators(
    family: ModelFamily,
    prior: Prior | None,
    estimators: dict,
    losses: Sequence[LossKind],
    n: int,
    reps: int,
    seed: int,
    x1_per_rep: int = 4,
    n_jobs: int = 1,
    settings: QuadratureSettings = DEFAULT_SETTINGS,
) -> RiskComparison:
    """Paired Monte-Carlo Bayes risks of several estimators on the same draws.

    ``estimators`` maps a name to an unfitted estimator. Replications are cut
    into contiguous blocks for ``n_jobs`` worker processes and re-assembled in
    index order.
    """
    if reps < 100:
        raise ValueError(f"need at least 100 replications; got {reps}")
    if n < 0 or x1_per_rep < 1:
        raise ValueError("need n >= 0 and x1_per_rep >= 1")
    prior = prior if prior is not None else family.default_prior()
    losses = tuple(LossKind(k) for k in losses)
    job = _Job(family, prior, tuple(estimators.values()), losses, n, x1_per_rep, seed, settings)
    if n_jobs <= 1:
        values = _run_block(job, 0, reps)
    else:
        bounds = np.linspace(0, reps, n_jobs + 1).astype(int)
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_run_block, job, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
            values = np.concatenate([f.result() for f in futures])
    failed = np.isnan(values).any(axis=2).sum(axis=0)
    for name, f in zip(estimators, failed):
        if f > MAX_FAILURE_FRACTION * reps:
            raise RiskHarnessError(f"estimator {name!r} failed in {f} of {reps} replications")
    return RiskComparison(tuple(estimators), losses, n, reps, seed, values, seeds_digest(seed, reps))


def estimate_bayes_risk(
    family: ModelFamily,
    prior: Prior | None,
    estimator,
    loss: LossKind,
    n: int,
    x1_per_rep: int,
    reps: int,
    seed: int,
    n_jobs: int = 1,
    settings: QuadratureSettings = DEFAULT_SETTINGS,
    name: str = "estimator",
) -> RiskReport:
    comp = compare_estimators(family, prior, {name: estimator}, [loss], n, reps, seed, x1_per_rep, n_jobs, settings)
    return comp.report(name, LossKind(loss))
