"""Posterior predictive distribution and the four Bayes estimators built from it.

Every Θ-integral here is taken against the posterior on its own converged
rule and then re-checked by one or more panel bisections, so integrands that
are sharper than the posterior itself (far tails of x2) are still resolved.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import SupportError
from .integrate import (
    DEFAULT_SETTINGS,
    IntegrationWarning,
    QuadratureSettings,
    _bisect_panels,
    _check_finite,
    _tolerance,
    composite_rule,
    piecewise_integrals,
)
from .posterior import PosteriorRep, build_posterior

MAX_EVENT_PIECES = 16


class NullConditioningError(ValueError):
    """The predictive marginal of X1 is zero (or negligible) at the conditioning point."""


class NonIntegrableMeanError(ArithmeticError):
    """The estimated conditional distribution has no finite first moment."""


@dataclass(frozen=True)
class Event:
    """A subset of the x2 axis: up to 16 disjoint closed intervals, or a finite point set."""

    intervals: tuple = ()
    points: tuple = ()

    def __post_init__(self):
        if self.intervals and self.points:
            raise ValueError("an event is either intervals or points, not both")
        ivs = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for a, b in ivs:
            if not a <= b:
                raise ValueError(f"interval [{a}, {b}] is empty")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 <= b0:
                raise ValueError("event intervals must be disjoint")
        pts = tuple(sorted({float(p) for p in self.points}))
        if len(ivs) > MAX_EVENT_PIECES:
            raise ValueError(f"at most {MAX_EVENT_PIECES} intervals per event")
        object.__setattr__(self, "intervals", ivs)
        object.__setattr__(self, "points", pts)

    @classmethod
    def below(cls, t: float) -> "Event":
        return cls(intervals=((-math.inf, t),))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        if self.points:
            return np.isin(x, self.points)
        out = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (x >= a) & (x <= b)
        return out


class PredictiveEvaluator:
    """Posterior predictive ``f*`` for a fitted posterior, and the Bayes estimators.

    * :meth:`conditional_probability_estimate` -- optimal for squared total variation.
    * :meth:`conditional_density_estimate` -- optimal for squared L1 (see ledger for
      the finite, three-or-more-point caveat).
    * :meth:`conditional_cdf_estimate` -- optimal for squared sup-distance (same caveat).
    * :meth:`regression_estimate` -- optimal for squared error.
    """

    def __init__(self, posterior: PosteriorRep, settings: QuadratureSettings | None = None):
        self.posterior = posterior
        self.settings = settings or posterior.settings
        self.model = posterior.model
        self._x2 = self.model.x2_support
        self._theta_hat = None

    # -- Θ-integrals -------------------------------------------------------

    def _masses(self, edges):
        post = self.posterior
        nodes, gw = composite_rule(edges, self.settings.order)
        dq = gw * post.prior.pdf(nodes)
        with np.errstate(over="ignore", invalid="ignore"):
            m = dq * np.exp(post.log_normalizer + post.log_likelihood(nodes))
        keep = m > 0
        return nodes[keep], m[keep]

    def theta_integral(self, g, peak_relative: bool = False):
        """``∫ g(θ) r*(θ) dQ(θ)``; ``g`` maps a node vector to ``(nodes, ...)`` values.

        With ``peak_relative`` a vector result converges against the tolerance of
        its largest entry rather than entry by entry (enough when the entries
        are quadrature nodes of an outer integral).
        """
        post = self.posterior
        if post.edges is None:
            m = post.node_masses
            keep = m > 0
            vals = np.asarray(g(post.nodes[keep]), dtype=float)
            _check_finite(vals, post.nodes[keep], "parameter")
            return np.tensordot(m[keep], vals, axes=1)
        s = self.settings
        edges = post.edges
        nodes, m = post.nodes, post.node_masses
        keep = m > 0
        nodes, m = nodes[keep], m[keep]
        prev = np.tensordot(m, np.asarray(g(nodes), dtype=float), axes=1)
        for _ in range(s.max_doublings):
            edges = _bisect_panels(edges)
            nodes, m = self._masses(edges)
            vals = np.asarray(g(nodes), dtype=float)
            _check_finite(vals, nodes, "parameter")
            cur = np.tensordot(m, vals, axes=1)
            ref = np.max(np.abs(cur), initial=0.0) if peak_relative else cur
            if np.all(np.abs(cur - prev) <= _tolerance(ref, s)):
                return cur
            prev = cur
        warnings.warn("posterior-weighted integral did not converge", IntegrationWarning, stacklevel=2)
        return cur

    def posterior_mean(self) -> float:
        return float(self.theta_integral(lambda t: t))

    # -- predictive densities ---------------------------------------------

    def _check_x1(self, x1):
        x1 = float(x1)
        if not (math.isfinite(x1) and bool(self.model.x1_support.contains(x1))):
            if not (not self.model.x1_support.discrete and x1 == self.model.x1_support.lo):
                raise SupportError(f"x1={x1!r} outside {self.model.x1_support}")
        return x1

    def predictive_joint_density(self, x1, x2):
        """``f*(x1, x2) = ∫ f_θ(x1, x2) r*(θ) dQ(θ)``, vectorised over ``x2``."""
        x1 = float(x1)
        x2 = np.asarray(x2, dtype=float)
        flat = x2.ravel()
        val = self.theta_integral(lambda t: self.model.joint_density(t[:, None], x1, flat[None, :]))
        return np.reshape(val, x2.shape)[()]

    def predictive_marginal1(self, x1):
        """``f*_1(x1) = ∫ f_θ,1(x1) r*(θ) dQ(θ)`` using the family's closed marginal."""
        x1 = np.asarray(x1, dtype=float)
        flat = x1.ravel()
        val = self.theta_integral(lambda t: self.model.marginal1_density(t[:, None], flat[None, :]))
        return np.reshape(val, x1.shape)[()]

    def _marginal_checked(self, x1):
        x1 = self._check_x1(x1)
        m = float(self.predictive_marginal1(x1))
        if not m >= self.settings.abs_tol:
            raise NullConditioningError(f"predictive marginal of X1 at x1={x1!r} is {m:.3g}")
        return x1, m

    def conditional_density_estimate(self, x1, x2):
        """``f*(x1, x2) / f*_1(x1)``; a probability function when x2 is discrete."""
        x1, m = self._marginal_checked(x1)
        return self.predictive_joint_density(x1, x2) / m

    def conditional_pmf(self, x1):
        """Estimated conditional probabilities over the discrete x2 support."""
        if not self._x2.discrete:
            raise TypeError("conditional_pmf needs a discrete x2 support")
        return self.conditional_density_estimate(x1, self._x2.array)

    # -- CDF / events -------------------------------------------------------

    def _x2_map(self, x1):
        if self._theta_hat is None:
            self._theta_hat = self.posterior.mean()
        loc, scale = self.model.x2_location_scale(self._theta_hat, x1)
        if not (math.isfinite(scale) and scale > 0):
            scale = 1.0
        return float(loc), float(scale)

    def _interval_masses(self, x1, m, edges):
        """Estimated conditional probability of each ``[edges[i], edges[i+1]]``."""
        loc, scale = self._x2_map(x1)
        vals, _, _ = piecewise_integrals(
            lambda u: self.theta_integral(lambda t: self.model.joint_density(t[:, None], x1, u[None, :]), peak_relative=True),
            edges,
            self.settings,
            loc,
            scale,
        )
        return np.maximum(vals, 0.0) / m

    def conditional_cdf_estimate(self, x1, t, method: str = "quadrature"):
        """Estimated conditional CDF ``F*(x1, t)``, vectorised over ``t``.

        ``method="quadrature"`` integrates the conditional density over x2;
        ``method="mixture"`` swaps the integration order and averages the
        true conditional CDFs with weights ``f_θ,1(x1) r*(θ)``.
        """
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        if method == "mixture":
            x1, m = self._marginal_checked(x1)
            num = self.theta_integral(
                lambda th: self.model.marginal1_density(th[:, None], x1)
                * self.model.true_conditional_cdf(th[:, None], x1, flat[None, :])
            )
            out = np.clip(num / m, 0.0, 1.0)
            order = np.argsort(flat)
            out[order] = np.maximum.accumulate(out[order])
            return np.reshape(out, t.shape)[()]
        if method != "quadrature":
            raise ValueError(f"unknown method {method!r}")
        if self._x2.discrete:
            pmf = self.conditional_pmf(x1)
            cum = np.cumsum(np.maximum(pmf, 0.0))
            c = np.searchsorted(self._x2.array, flat, side="right")
            out = np.where(c > 0, cum[np.maximum(c - 1, 0)], 0.0)
            return np.reshape(np.clip(out, 0.0, 1.0), t.shape)[()]
        x1, m = self._marginal_checked(x1)
        lo, hi = self._x2.bounds
        order = np.argsort(flat)
        ts = np.clip(flat[order], lo, hi)
        edges = np.concatenate([[lo], ts])
        pieces = self._interval_masses(x1, m, edges)
        out = np.empty_like(flat)
        out[order] = np.clip(np.cumsum(pieces), 0.0, 1.0)
        out[flat <= lo] = 0.0
        return np.reshape(out, t.shape)[()]

    def conditional_probability_estimate(self, x1, event: Event) -> float:
        """Estimated conditional probability of an :class:`Event` given ``x1``."""
        if self._x2.discrete:
            pmf = self.conditional_pmf(x1)
            return float(min(1.0, math.fsum(pmf[event.contains(self._x2.array)])))
        x1, m = self._marginal_checked(x1)
        if event.points:
            return 0.0
        lo, hi = self._x2.bounds
        total = 0.0
        for a, b in event.intervals:
            a, b = max(a, lo), min(b, hi)
            if a < b:
                total += float(self._interval_masses(x1, m, [a, b])[0])
        return min(1.0, total)

    # -- regression ---------------------------------------------------------

    def _check_tail(self, x1, loc, scale):
        """Reject conditional estimates whose tails decay no faster than ``1/t²``."""
        lo, hi = self._x2.bounds
        for sign, end in ((1.0, hi), (-1.0, lo)):
            if math.isfinite(end):
                continue
            ts = loc + sign * scale * np.array([2.0**4, 2.0**6])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", IntegrationWarning)
                g = np.abs(ts) * np.asarray(self.predictive_joint_density(x1, ts))
            if g[0] > 0 and g[1] > 0:
                slope = math.log(g[1] / g[0]) / math.log(abs(ts[1] - loc) / abs(ts[0] - loc))
                if slope >= -1.0:
                    raise NonIntegrableMeanError(
                        f"x2 * f*(x1, x2) decays like |x2|^{slope:.2f} at x1={x1!r}; the conditional mean diverges"
                    )

    def regression_estimate(self, x1, method: str = "quadrature") -> float:
        """Estimated regression ``m*(x1)``, the mean of the estimated conditional.

        ``method="quadrature"`` takes the ratio of two x2 line integrals;
        ``method="mixture"`` averages ``r_θ(x1)`` with weights ``f_θ,1(x1) r*(θ)``.
        """
        x1, m = self._marginal_checked(x1)
        if method == "mixture":
            num = self.theta_integral(
                lambda th: self.model.marginal1_density(th, x1) * self.model.true_regression(th, x1)
            )
            return float(num / m)
        if method != "quadrature":
            raise ValueError(f"unknown method {method!r}")
        if self._x2.discrete:
            pts = self._x2.array
            pmf = self.conditional_pmf(x1)
            return math.fsum(pts * pmf) / math.fsum(pmf)
        loc, scale = self._x2_map(x1)
        self._check_tail(x1, loc, scale)
        lo, hi = self._x2.bounds
        edges = [lo, hi] if not (lo < loc < hi) else [lo, loc, hi]
        num, _, _ = piecewise_integrals(lambda u: u * self.predictive_joint_density(x1, u), edges, self.settings, loc, scale)
        den, _, _ = piecewise_integrals(lambda u: self.predictive_joint_density(x1, u), edges, self.settings, loc, scale)
        return math.fsum(num) / math.fsum(den)


def evaluator_for(model, prior, X, settings: QuadratureSettings = DEFAULT_SETTINGS) -> PredictiveEvaluator:
    return PredictiveEvaluator(build_posterior(model, prior, X, settings), settings)
