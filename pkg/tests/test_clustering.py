import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pico.clustering import (assign_instances, cluster_energy, kmeanspp_init, subsample, update_centers,
                             weighted_kmeans)
from pico.errors import ConfigurationError


def test_assign_exact_and_tie():
    centers = np.array([[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]])
    assert assign_instances([[5.0, 5.0]], centers).tolist() == [2]
    assert assign_instances([[1.0, 0.0]], centers).tolist() == [0]


def test_assign_matches_brute_force(rng):
    x = rng.standard_normal((6, 3))
    c = rng.standard_normal((2, 3))
    brute = [min(range(2), key=lambda k: float(np.sum((xi - c[k]) ** 2))) for xi in x]
    assert assign_instances(x, c).tolist() == brute


def test_assign_errors():
    with pytest.raises(ConfigurationError):
        assign_instances(np.zeros((0, 2)), np.zeros((1, 2)))
    with pytest.raises(ConfigurationError):
        assign_instances(np.zeros((3, 2)), np.zeros((0, 2)))


def test_update_examples():
    x = np.array([[0.0], [2.0]])
    np.testing.assert_array_equal(update_centers(x, [0, 0], [1.0, 1.0]), [[1.0]])
    np.testing.assert_array_equal(update_centers(x, [0, 0], [1.0, 3.0]), [[1.5]])
    same = np.tile([[0.3, -1.0]], (4, 1))
    np.testing.assert_allclose(update_centers(same, [0] * 4, np.ones(4)), [[0.3, -1.0]])


def test_zero_weight_cluster_reseeds_or_raises():
    x = np.array([[0.0], [1.0], [10.0]])
    with pytest.raises(ConfigurationError):
        update_centers(x, [0, 0, 1], [1.0, 1.0, 0.0])
    out = update_centers(x, [0, 0, 1], [1.0, 1.0, 0.0], previous=np.array([[0.0], [10.0]]))
    assert out[0, 0] == 0.5
    assert out[1, 0] in (0.0, 1.0)  # farthest weighted instance from its center


def test_energy_examples():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert cluster_energy(x, [0, 1], x, [1.0, 1.0]) == 0.0
    assert cluster_energy([[1.0]], [0], [[0.0]], [2.0]) == 2.0
    rng = np.random.default_rng(3)
    y, c, w = rng.standard_normal((5, 2)), rng.standard_normal((2, 2)), rng.random(5)
    a = assign_instances(y, c)
    assert cluster_energy(y, a, c, 2 * w) == pytest.approx(2 * cluster_energy(y, a, c, w), rel=1e-15)


def test_two_groups_recover_weighted_means():
    g0 = np.array([[0.0, 0.0], [1.0, 0.0]])
    g1 = np.array([[100.0, 100.0], [101.0, 102.0]])
    w = np.array([1.0, 3.0, 2.0, 2.0])
    st = weighted_kmeans(np.vstack([g0, g1]), w, 2, init_centers=np.array([[0.0, 0.0], [100.0, 100.0]]))
    np.testing.assert_allclose(st.centers, [[0.75, 0.0], [100.5, 101.0]])


def test_single_cluster_is_weighted_mean(rng):
    x = rng.standard_normal((20, 3))
    w = rng.random(20)
    st = weighted_kmeans(x, w, 1, rng=rng)
    np.testing.assert_allclose(st.centers[0], (w[:, None] * x).sum(0) / w.sum())


def test_optimum_init_is_fixed_point():
    x = np.array([[0.0], [2.0], [10.0], [12.0]])
    opt = np.array([[1.0], [11.0]])
    st = weighted_kmeans(x, np.ones(4), 2, init_centers=opt)
    assert st.iterations_run == 1
    np.testing.assert_array_equal(st.centers, opt)


def test_kmeans_errors(rng):
    x = rng.standard_normal((5, 2))
    with pytest.raises(ConfigurationError):
        weighted_kmeans(x, np.ones(5), 0)
    with pytest.raises(ConfigurationError):
        weighted_kmeans(x, np.zeros(5), 2)
    with pytest.raises(ConfigurationError):
        weighted_kmeans(x, -np.ones(5), 2)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_energy_history_non_increasing(seed, k):
    r = np.random.default_rng(seed)
    x = r.standard_normal((40, 5))
    w = r.random(40)
    st = weighted_kmeans(x, w, k, rng=r)
    assert all(b <= a for a, b in zip(st.energy_history, st.energy_history[1:]))


@given(st.integers(0, 10_000))
def test_assignment_ignores_weight_scale(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((30, 3))
    w = r.random(30) + 0.01
    init = x[:3].copy()
    a = weighted_kmeans(x, w, 3, init_centers=init)
    b = weighted_kmeans(x, 7.5 * w, 3, init_centers=init)
    assert np.array_equal(a.assignment, b.assignment)


def test_deterministic(rng):
    x = rng.standard_normal((50, 4))
    w = rng.random(50)
    a = weighted_kmeans(x, w, 4, rng=np.random.default_rng(1))
    b = weighted_kmeans(x, w, 4, rng=np.random.default_rng(1))
    assert np.array_equal(a.centers, b.centers) and a.energy_history == b.energy_history


def test_kmeanspp_skips_zero_weight_points(rng):
    x = rng.standard_normal((10, 2))
    w = np.zeros(10)
    w[[2, 7]] = 1.0
    c = kmeanspp_init(x, w, 2, rng)
    got = {tuple(row) for row in c}
    assert got == {tuple(x[2]), tuple(x[7])}


def test_indicator_and_subsample(rng):
    st = weighted_kmeans(rng.standard_normal((8, 2)), np.ones(8), 3, rng=rng)
    ind = st.indicator()
    assert ind.shape == (8, 3) and np.all(ind.sum(1) == 1)
    assert subsample(5, 10, rng).tolist() == [0, 1, 2, 3, 4]
    s = subsample(100, 10, rng)
    assert s.size == 10 and np.all(np.diff(s) > 0)
