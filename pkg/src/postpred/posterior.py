"""Posterior of θ given a sample, kept as a Q-density ``r*(θ) = K(x') f_{n,θ}(x')``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import FinitePrior, ModelFamily, Prior, log_joint_sample_density, validate_sample
from .integrate import DEFAULT_SETTINGS, QuadratureSettings, _prior_rule_integral, composite_rule, theta_edges


class ImpossibleSampleError(ValueError):
    """The sample has zero density under every parameter the prior charges."""


@dataclass(frozen=True, eq=False)
class PosteriorRep:
    """Posterior as (prior, weight function) plus the quadrature rule that resolved it.

    ``nodes``/``dq_weights`` is the rule on which the evidence converged;
    downstream Θ-integrals against the posterior reuse it.
    """

    model: ModelFamily
    prior: Prior
    sample: np.ndarray
    log_normalizer: float
    settings: QuadratureSettings
    nodes: np.ndarray = field(repr=False)
    dq_weights: np.ndarray = field(repr=False)
    log_lik: np.ndarray = field(repr=False)
    edges: np.ndarray | None = field(default=None, repr=False)
    normalization_error: float = 0.0

    @property
    def n(self) -> int:
        return self.sample.shape[0]

    def log_density(self, theta):
        return self.log_normalizer + log_joint_sample_density(self.model, theta, self.sample)

    def density(self, theta):
        """``r*(θ)``, the density of the posterior with respect to the prior."""
        return np.exp(self.log_density(theta))

    @property
    def node_masses(self) -> np.ndarray:
        """Posterior probability carried by each quadrature node (sums to 1)."""
        return self.dq_weights * np.exp(self.log_normalizer + self.log_lik)

    def expectation(self, g):
        """``∫ g(θ) r*(θ) dQ(θ)`` on the stored rule; ``g`` is vectorised."""
        m = self.node_masses
        keep = m > 0
        vals = np.asarray(g(self.nodes[keep]), dtype=float)
        return np.tensordot(m[keep], vals, axes=1)

    def log_likelihood(self, theta):
        with np.errstate(divide="ignore"):
            return log_joint_sample_density(self.model, theta, self.sample)

    def mean(self) -> float:
        return float(self.expectation(lambda t: t))

    def as_prior(self) -> Prior:
        """The posterior, usable as the prior of a further update."""
        if self.prior.is_finite:
            pts = self.prior.point_array
            w = self.prior.weight_array * self.density(pts)
            return FinitePrior(tuple(pts), tuple(w / w.sum()))
        return ReweightedPrior(self)


@dataclass(frozen=True, eq=False)
class ReweightedPrior(Prior):
    """Prior ``Q`` reweighted by a posterior density ``r*``."""

    posterior: PosteriorRep

    @property
    def support(self):
        return self.posterior.prior.support

    def logpdf(self, theta):
        with np.errstate(invalid="ignore"):
            return self.posterior.prior.logpdf(theta) + self.posterior.log_density(theta)

    def sample(self, rng, size=None):
        raise NotImplementedError("sampling from a reweighted prior is not supported")

    def mean(self) -> float:
        return self.posterior.mean()

    def truncated_support(self, mass):
        return self.posterior.prior.truncated_support(mass)


def build_posterior(
    model: ModelFamily,
    prior: Prior,
    X,
    settings: QuadratureSettings = DEFAULT_SETTINGS,
) -> PosteriorRep:
    """Posterior ``R*_{n,x'}`` with ``log K(x') = -log ∫ f_{n,θ}(x') dQ(θ)``.

    The evidence integrand is stabilised by the maximum of ``log f_{n,θ}(x')``
    over the first-pass quadrature nodes before exponentiating.
    """
    X = validate_sample(model, X)

    def loglik(theta):
        with np.errstate(divide="ignore"):
            return log_joint_sample_density(model, theta, X)

    if prior.is_finite:
        probe = prior.point_array
    else:
        probe, _ = composite_rule(theta_edges(prior, settings, loglik if X.shape[0] else None), settings.order)
    probe_ll = loglik(probe)
    finite = np.isfinite(probe_ll)
    if prior.is_finite:
        finite &= prior.weight_array > 0
    if not finite.any():
        raise ImpossibleSampleError("sample has zero density under every parameter value the prior charges")
    shift = float(np.max(probe_ll[finite]))

    result, (nodes, dq, edges) = _prior_rule_integral(
        lambda t: np.exp(loglik(t) - shift),
        prior,
        settings,
        log_peak=loglik if X.shape[0] else None,
    )
    evidence = float(result.value)
    if not evidence > 0:
        raise ImpossibleSampleError("posterior evidence underflowed to zero after stabilisation")
    log_norm = -(shift + math.log(evidence))
    ll = loglik(nodes)
    return PosteriorRep(
        model=model,
        prior=prior,
        sample=X,
        log_normalizer=log_norm,
        settings=settings,
        nodes=nodes,
        dq_weights=dq,
        log_lik=ll,
        edges=edges,
        normalization_error=float(result.error) / evidence,
    )


def posterior_density(post: PosteriorRep, theta) -> np.ndarray:
    return post.density(theta)
