import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npp.core import Component, Dataset, FunctionalPosterior, SeededRng, mix_posteriors, weighted_quantile


def atoms(pairs, component=Component.PARAMETRIC):
    vals, w = zip(*pairs)
    return FunctionalPosterior(np.array(vals, dtype=float), np.array(w), component)


def test_dataset_shapes():
    d = Dataset([1.0, 2.0, 3.0])
    assert (d.n, d.dim) == (3, 1)
    assert Dataset.empty(2).points.shape == (0, 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2))).values()
    with pytest.raises(ValueError):
        d.points[0, 0] = 5.0


def test_rng_streams_reproducible_and_distinct():
    a = SeededRng(7, 3).generator().standard_normal(5)
    b = SeededRng(7, 3).generator().standard_normal(5)
    c = SeededRng(7, 4).generator().standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(SeededRng(7, 3).child(1).generator().standard_normal(5), a)


def test_rng_streams_uncorrelated():
    x = SeededRng(1, 0).generator().standard_normal(20000)
    y = SeededRng(1, 1).generator().standard_normal(20000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / np.sqrt(20000)


def test_quantile_single_atom():
    assert weighted_quantile(atoms([(5, 1.0)]), 0.5) == 5


def test_quantile_left_convention():
    assert weighted_quantile(atoms([(0, 0.5), (10, 0.5)]), 0.5) == 0


def test_quantile_normal_draws_match_sorted_oracle():
    x = SeededRng(11).generator().standard_normal(1000)
    post = FunctionalPosterior.from_draws(x, Component.NONPARAMETRIC)
    q = weighted_quantile(post, 0.5)
    # equal weights 1/1000: cumulative weight first reaches 0.5 at the 500th order statistic
    assert q == np.sort(x)[499]
    assert abs(q) < 0.1


def test_quantile_empty_errors():
    empty = FunctionalPosterior(np.empty(0), np.empty(0), np.empty(0))
    with pytest.raises(ValueError, match="empty posterior"):
        weighted_quantile(empty, 0.5)


def test_weights_must_normalize():
    with pytest.raises(ValueError):
        FunctionalPosterior(np.array([1.0, 2.0]), np.array([0.5, 0.6]), Component.PARAMETRIC)


def test_mix_degenerate_weights():
    pm, np_ = atoms([(1, 1.0)]), atoms([(2, 1.0)], Component.NONPARAMETRIC)
    assert mix_posteriors(pm, np_, 1.0) is pm
    assert mix_posteriors(pm, np_, 0.0) is np_


def test_mix_definition():
    pm, np_ = atoms([(1, 1.0)]), atoms([(2, 1.0)], Component.NONPARAMETRIC)
    out = mix_posteriors(pm, np_, 0.3)
    assert out.values[:, 0].tolist() == [1.0, 2.0]
    assert np.allclose(out.weights, [0.3, 0.7], atol=1e-15)
    assert out.component_weight(Component.PARAMETRIC) == pytest.approx(0.3, abs=1e-15)
    assert out.components.tolist() == [Component.PARAMETRIC, Component.NONPARAMETRIC]


def test_mix_rejects_bad_eta():
    pm = atoms([(1, 1.0)])
    for eta in (-0.1, 1.5):
        with pytest.raises(ValueError):
            mix_posteriors(pm, pm, eta)


weights_strategy = st.lists(st.floats(0.001, 10.0), min_size=1, max_size=30)


@settings(max_examples=200, deadline=None)
@given(weights_strategy, weights_strategy, st.floats(0.0, 1.0))
def test_mix_normalized_and_component_mass(w1, w2, eta):
    a = FunctionalPosterior.from_draws(np.arange(len(w1)), Component.PARAMETRIC, np.array(w1))
    b = FunctionalPosterior.from_draws(np.arange(len(w2)), Component.NONPARAMETRIC, np.array(w2))
    out = mix_posteriors(a, b, eta)
    assert abs(out.weights.sum() - 1.0) <= 1e-12
    assert out.component_weight(Component.PARAMETRIC) == pytest.approx(eta, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), weights_strategy,
       st.floats(0, 1), st.floats(0, 1))
def test_quantile_monotone_in_q(vals, w, q1, q2):
    k = min(len(vals), len(w))
    post = FunctionalPosterior.from_draws(np.array(vals[:k]), Component.PARAMETRIC, np.array(w[:k]))
    lo, hi = sorted((q1, q2))
    assert weighted_quantile(post, lo) <= weighted_quantile(post, hi)


def test_interval_and_summaries():
    post = atoms([(-1, 0.25), (0, 0.25), (2, 0.5)])
    assert post.mean()[0] == pytest.approx(0.75)
    assert post.prob_positive() == pytest.approx(0.5)
    assert post.interval(0.5) == (-1.0, 2.0)
