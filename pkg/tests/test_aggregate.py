import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from policysteer.aggregate import (
    TimeSeriesKMeans,
    alignment_path,
    cluster_plans,
    dtw_distance,
    nms_filter,
    pairwise_dtw,
)
from policysteer.env import observe, reset
from policysteer.exceptions import ConfigurationError
from policysteer.policy import sample_plans

from .oracles import brute_force_dtw, path_cost

finite = st.floats(-2, 2, allow_nan=False, width=64)


def seq(max_len=6, dim=2):
    return st.integers(1, max_len).flatmap(lambda n: arrays(np.float64, (n, dim), elements=finite))


def test_dtw_matches_brute_force_on_100_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, m, d = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 4)
        a, b = rng.normal(size=(n, d)), rng.normal(size=(m, d))
        assert dtw_distance(a, b) == pytest.approx(brute_force_dtw(a, b), rel=1e-12, abs=1e-12)


def test_dtw_known_values():
    assert dtw_distance([1.0, 2.0, 3.0], [1.0, 2.0, 2.0, 3.0]) == 0.0
    assert dtw_distance([0.0, 0.0], [1.0, 1.0]) == 2.0


def test_dtw_is_not_a_metric():
    x, y, z = [1.0, 1.0, 1.0], [0.0, 2.0], [1.0]
    assert dtw_distance(x, y) > dtw_distance(x, z) + dtw_distance(z, y)


@given(seq(), seq())
def test_alignment_path_is_optimal_and_monotone(a, b):
    path = [tuple(int(v) for v in step) for step in alignment_path(a, b)]
    assert path[0] == (0, 0) and path[-1] == (len(a) - 1, len(b) - 1)
    for (i, j), (k, l) in zip(path, path[1:]):
        assert (k - i, l - j) in {(1, 1), (1, 0), (0, 1)}
    assert path_cost(a, b, path) == pytest.approx(dtw_distance(a, b), rel=1e-9, abs=1e-9)


@given(seq(), seq())
def test_dtw_symmetric_nonnegative(a, b):
    d = dtw_distance(a, b)
    assert d >= 0
    assert d == pytest.approx(dtw_distance(b, a), rel=1e-12, abs=1e-12)
    assert dtw_distance(a, a) == 0


@given(seq(8, 1), seq(8, 1), st.integers(1, 3))
def test_band_never_lowers_cost(a, b, band):
    assert dtw_distance(a, b, band) >= dtw_distance(a, b) - 1e-12
    assert dtw_distance(a, b, 100) == pytest.approx(dtw_distance(a, b))


def test_pairwise_shape():
    X = np.zeros((3, 5, 2))
    Y = np.ones((2, 5, 2))
    D = pairwise_dtw(X, Y)
    assert D.shape == (3, 2)
    np.testing.assert_allclose(D, 5 * np.sqrt(2))


def test_inertia_nonincreasing_on_20_datasets():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        centers = rng.normal(size=(3, 10, 2))
        X = centers[rng.integers(0, 3, size=30)] + 0.5 * rng.normal(size=(30, 10, 2))
        km = TimeSeriesKMeans(n_clusters=3, max_iter=15, random_state=seed).fit(X)
        hist = np.array(km.inertia_history_)
        assert np.all(np.diff(hist) <= 1e-9 * max(1.0, hist[0])), hist


def test_two_mode_purity(cup_policy):
    obs = observe(reset("cup", 0))
    plans = sample_plans(cup_policy, obs, 100, rng_seed=1)
    result = cluster_plans(plans, 2, rng_seed=0)
    hints = np.array([p.mode_hint for p in plans])
    labels = np.array(result.assignments)
    for c in range(2):
        members = hints[labels == c]
        assert len(set(members)) == 1
    assert sorted(result.sizes.tolist()) == sorted(np.unique(hints, return_counts=True)[1].tolist())


def test_k_equals_one_and_too_few():
    X = np.random.default_rng(0).normal(size=(4, 6, 3))
    km = TimeSeriesKMeans(n_clusters=1).fit(X)
    assert set(km.labels_) == {0}
    with pytest.raises(ConfigurationError):
        TimeSeriesKMeans(n_clusters=5).fit(X)


def test_no_empty_clusters_with_duplicates():
    X = np.zeros((6, 4, 1))
    X[3:] = 1.0
    km = TimeSeriesKMeans(n_clusters=3, random_state=0).fit(X)
    assert np.all(np.bincount(km.labels_, minlength=3) > 0)


def test_estimator_params_and_predict():
    X = np.random.default_rng(1).normal(size=(10, 6, 3))
    km = TimeSeriesKMeans(n_clusters=2, band=2)
    assert km.get_params() == {"n_clusters": 2, "max_iter": 20, "band": 2, "random_state": 0}
    km.fit(X)
    np.testing.assert_array_equal(km.predict(X), km.labels_)


def test_deterministic_clustering(cup_policy):
    plans = sample_plans(cup_policy, observe(reset("cup", 2)), 40, rng_seed=3)
    a = cluster_plans(plans, 6, rng_seed=4)
    b = cluster_plans(plans, 6, rng_seed=4)
    assert a.assignments == b.assignments
    for x, y in zip(a.centers, b.centers):
        np.testing.assert_array_equal(x.actions, y.actions)


def test_nms_drops_near_duplicates():
    X = np.zeros((6, 5, 3))
    X[3:] += 0.5
    X[5] += 0.001
    result = cluster_plans(X, 3, rng_seed=0)
    kept = nms_filter(result, dtw_eps=0.1)
    assert len(kept) == 2
    assert kept == sorted(kept, key=lambda c: -result.sizes[c])
    assert len(nms_filter(result, dtw_eps=0.0)) == 3
