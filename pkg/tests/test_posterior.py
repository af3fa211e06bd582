import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from postpred.core import FinitePrior, GammaPrior, UniformPrior
from postpred.models import (
    BivariateNormalFamily,
    CoinPairFamily,
    FiniteTableFamily,
    GammaExpFamily,
    normal_posterior_hyper,
    shipped_family,
)
from postpred.posterior import ImpossibleSampleError, build_posterior


def _gamma_post_law(X, lam):
    X = np.asarray(X, float).reshape(-1, 2)
    c = lam + float(np.sum(X[:, 0] * (1 + X[:, 1])))
    return stats.gamma(2 * len(X) + 1, scale=1 / c)


def test_gamma_posterior_density_is_conjugate():
    X = [[2.0, 3.0], [0.5, 1.0]]
    fam = GammaExpFamily(lam=1.5)
    post = build_posterior(fam, fam.default_prior(), X)
    law = _gamma_post_law(X, 1.5)
    th = np.array([0.1, 0.5, 1.0, 2.0])
    # density w.r.t. the prior times prior pdf = posterior pdf
    got = post.density(th) * fam.default_prior().pdf(th)
    assert np.allclose(got, law.pdf(th), rtol=1e-9)
    assert post.mean() == pytest.approx(law.mean(), rel=1e-10)


def test_single_pair_posterior_mean():
    # x' = ((2, 3)), lambda = 1: c = 1 + 2*4 = 9, mean 3/9
    fam = GammaExpFamily()
    assert build_posterior(fam, fam.default_prior(), [[2.0, 3.0]]).mean() == pytest.approx(1 / 3, rel=1e-12)


def test_node_masses_sum_to_one():
    fam = GammaExpFamily()
    post = build_posterior(fam, fam.default_prior(), [[1.0, 1.0]] * 4)
    assert math.fsum(post.node_masses) == pytest.approx(1.0, abs=1e-10)
    assert post.normalization_error < 1e-8


def test_empty_sample_posterior_is_prior():
    fam = GammaExpFamily(lam=2.0)
    post = build_posterior(fam, fam.default_prior(), np.empty((0, 2)))
    assert post.n == 0
    assert post.mean() == pytest.approx(0.5, rel=1e-10)


def test_normal_posterior_matches_completed_square():
    fam = BivariateNormalFamily(sigma=1.3, rho=0.4, mu=0.5, tau=2.0)
    X = [[1.0, 2.0], [-0.5, 0.3], [2.2, 1.1]]
    post = build_posterior(fam, fam.default_prior(), X)
    hyp = normal_posterior_hyper(X, 1.3, 0.4, 0.5, 2.0)
    assert post.mean() == pytest.approx(hyp.mean, rel=1e-10)
    assert post.expectation(lambda t: (t - hyp.mean) ** 2) == pytest.approx(hyp.var, rel=1e-8)


def test_coin_posterior_is_beta():
    # counts: two (1,1), one (0,1), one (1,0)
    X = [[1, 1], [1, 1], [0, 1], [1, 0]]
    post = build_posterior(CoinPairFamily(), UniformPrior(0.0, 1.0), X)
    # kernel theta^(2*2 + 1) (1-theta)^(2*1 + 1)
    assert post.mean() == pytest.approx(stats.beta(6, 4).mean(), rel=1e-10)


def test_impossible_sample_raises():
    tab = np.zeros((2, 2, 2))
    tab[0, 0, 0] = tab[1, 0, 1] = 1.0
    fam = FiniteTableFamily((0.0, 1.0), (0.5, 0.5), (0.0, 1.0), (0.0, 1.0), tab)
    with pytest.raises(ImpossibleSampleError):
        build_posterior(fam, fam.default_prior(), [[1.0, 1.0]])


def test_finite_posterior_is_bayes_rule():
    fam = shipped_family("two_point")
    post = build_posterior(fam, fam.default_prior(), [[0.0, 0.0]])
    # P(theta=0 | (0,0)) = .5*1 / (.5*1 + .5*.25)
    assert post.as_prior().weight_array[0] == pytest.approx(0.8, abs=1e-15)


xs = st.lists(st.tuples(st.floats(0.05, 6.0), st.floats(0.05, 6.0)), min_size=1, max_size=4)


@settings(max_examples=8)
@given(xs, xs)
def test_sequential_update_matches_batch(a, b):
    fam = GammaExpFamily()
    prior = fam.default_prior()
    batch = build_posterior(fam, prior, a + b)
    step = build_posterior(fam, build_posterior(fam, prior, a).as_prior(), b)
    for g in (lambda t: t, lambda t: t * t):
        assert step.expectation(g) == pytest.approx(batch.expectation(g), rel=1e-7)


@given(st.lists(st.sampled_from([(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (1.0, 2.0), (0.0, 2.0)]), min_size=1, max_size=5))
def test_sequential_update_finite_is_exact(pairs):
    fam = shipped_family("ternary")
    prior = fam.default_prior()
    cut = len(pairs) // 2
    batch = build_posterior(fam, prior, pairs).as_prior()
    step = build_posterior(fam, build_posterior(fam, prior, pairs[:cut]).as_prior(), pairs[cut:]).as_prior()
    assert np.allclose(step.weight_array, batch.weight_array, atol=1e-14)


@given(xs)
def test_posterior_mean_inside_support(a):
    fam = GammaExpFamily()
    m = build_posterior(fam, GammaPrior(2.0, 1.0), a).mean()
    assert m > 0 and math.isfinite(m)


def test_point_mass_prior_posterior_is_the_point():
    fam = GammaExpFamily()
    post = build_posterior(fam, FinitePrior.point_mass(2.0), [[1.0, 1.0]])
    assert post.mean() == 2.0
