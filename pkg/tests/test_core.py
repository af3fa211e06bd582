import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from postpred.core import (
    FinitePrior,
    GammaPrior,
    Interval,
    NormalPrior,
    Points,
    SupportError,
    UniformPrior,
    joint_sample_density,
    log_joint_sample_density,
    validate_param,
    validate_sample,
)
from postpred.models import BivariateNormalFamily, CoinPairFamily, GammaExpFamily

ALPHA = 1e-3


def test_interval_is_open():
    iv = Interval(0.0, 1.0)
    assert list(iv.contains([0.0, 0.5, 1.0])) == [False, True, False]
    assert iv.bounds == (0.0, 1.0)


def test_points_sorted_and_distinct():
    assert Points((2.0, 0.0, 1.0)).values == (0.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        Points((1.0, 1.0))


@pytest.mark.parametrize(
    "make",
    [
        lambda: GammaPrior(0.0, 1.0),
        lambda: GammaPrior(1.0, -1.0),
        lambda: NormalPrior(0.0, 0.0),
        lambda: UniformPrior(1.0, 1.0),
        lambda: FinitePrior((0.0, 1.0), (0.5,)),
        lambda: FinitePrior((0.0,), (-1.0,)),
    ],
)
def test_bad_prior_hyperparameters_rejected(make):
    with pytest.raises(ValueError):
        make()


def test_finite_prior_weights_must_sum_to_one():
    with pytest.raises(ValueError, match="sum to"):
        FinitePrior((1.0, 2.0), (1.0, 3.0))
    p = FinitePrior((1.0, 2.0), (0.25, 0.75))
    assert np.allclose(p.weight_array, [0.25, 0.75])
    assert p.mean() == pytest.approx(1.75)
    assert FinitePrior.point_mass(2.5).point_array.tolist() == [2.5]


@pytest.mark.parametrize(
    "prior, dist",
    [
        (GammaPrior(2.0, 0.5), stats.gamma(2.0, scale=0.5)),
        (NormalPrior(1.0, 4.0), stats.norm(1.0, 2.0)),
        (UniformPrior(-1.0, 3.0), stats.uniform(-1.0, 4.0)),
    ],
)
def test_prior_sampler_goodness_of_fit(prior, dist, rng):
    draws = prior.sample(rng, 4000)
    assert stats.kstest(draws, dist.cdf).pvalue > ALPHA
    assert prior.mean() == pytest.approx(dist.mean())


def test_finite_prior_sampler_chi_square(rng):
    p = FinitePrior((0.0, 1.0, 2.0), (0.2, 0.3, 0.5))
    draws = p.sample(rng, 6000)
    counts = np.array([(draws == v).sum() for v in (0.0, 1.0, 2.0)])
    assert stats.chisquare(counts, 6000 * p.weight_array).pvalue > ALPHA


def test_truncated_support_leaves_tail_mass():
    p = GammaPrior(3.0, 1.0)
    lo, hi = p.truncated_support(1e-10)
    assert stats.gamma(3.0).sf(hi) == pytest.approx(1e-10, rel=1e-6)
    assert lo >= 0.0


def test_validate_sample_shapes_and_support():
    fam = GammaExpFamily()
    assert validate_sample(fam, []).shape == (0, 2)
    assert validate_sample(fam, [2.0, 3.0]).shape == (1, 2)
    with pytest.raises(SupportError, match="pair 1, coordinate x1"):
        validate_sample(fam, [[1.0, 1.0], [-1.0, 2.0]])
    with pytest.raises(SupportError):
        validate_sample(fam, np.ones((2, 3)))
    with pytest.raises(SupportError):
        validate_sample(CoinPairFamily(), [[0.0, 0.5]])
    with pytest.raises(ValueError):
        validate_param(fam, -1.0)


def test_empty_sample_has_unit_density():
    assert joint_sample_density(GammaExpFamily(), 1.3, np.empty((0, 2))) == 1.0


pairs = st.lists(
    st.tuples(st.floats(0.01, 20.0), st.floats(0.01, 20.0)), min_size=0, max_size=6
)


@given(pairs, pairs, st.floats(0.05, 10.0))
def test_log_density_additive_over_concatenation(a, b, theta):
    fam = GammaExpFamily()
    A, B = np.array(a).reshape(-1, 2), np.array(b).reshape(-1, 2)
    joint = log_joint_sample_density(fam, theta, np.vstack([A, B]))
    assert joint == pytest.approx(log_joint_sample_density(fam, theta, A) + log_joint_sample_density(fam, theta, B), abs=1e-9)


@given(st.floats(0.05, 8.0), st.floats(0.05, 8.0))
def test_gamma_joint_density_matches_definition(theta, x1):
    fam = GammaExpFamily()
    x2 = 0.7
    want = theta**2 * x1 * math.exp(-theta * x1 * (1 + x2))
    assert fam.joint_density(theta, x1, x2) == pytest.approx(want, rel=1e-12)
    # marginal and conditional are consistent
    assert fam.marginal1_density(theta, x1) * fam.true_conditional_density(theta, x1, x2) == pytest.approx(want, rel=1e-12)


@given(st.floats(0.0, 1.0))
def test_coin_probabilities_sum_to_one(theta):
    fam = CoinPairFamily()
    cells = [fam.joint_density(theta, a, b) for a in (0, 1) for b in (0, 1)]
    assert math.fsum(cells) == pytest.approx(1.0, abs=1e-12)


def test_gamma_family_sampler(rng):
    theta = 1.7
    X = GammaExpFamily().sample(theta, rng, 4000)
    assert stats.kstest(X[:, 0], stats.expon(scale=1 / theta).cdf).pvalue > ALPHA
    # theta * x1 * x2 is unit exponential given x1
    assert stats.kstest(theta * X[:, 0] * X[:, 1], stats.expon().cdf).pvalue > ALPHA


def test_normal_family_sampler(rng):
    fam = BivariateNormalFamily(sigma=1.5, rho=0.6)
    X = fam.sample(0.4, rng, 4000)
    z1 = (X[:, 0] - 0.4) / 1.5
    assert stats.kstest(z1, "norm").pvalue > ALPHA
    resid = (X[:, 1] - fam.true_regression(0.4, X[:, 0])) / (1.5 * math.sqrt(1 - 0.36))
    assert stats.kstest(resid, "norm").pvalue > ALPHA


def test_coin_family_sampler(rng):
    fam = CoinPairFamily()
    theta = 0.3
    X = fam.sample(theta, rng, 8000)
    cells = [(a, b) for a in (0, 1) for b in (0, 1)]
    counts = [int(np.sum((X[:, 0] == a) & (X[:, 1] == b))) for a, b in cells]
    expected = [8000 * float(fam.joint_density(theta, a, b)) for a, b in cells]
    assert stats.chisquare(counts, expected).pvalue > ALPHA
