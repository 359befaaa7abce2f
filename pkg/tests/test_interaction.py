import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pico.embeddings import EmbeddingSet, normalize_rows
from pico.errors import ConfigurationError
from pico.interaction import (aggregate_batch, aggregate_score, batch_correlations, correlation_matrix,
                              pair_score, score_matrix, weight_tokens)

unit_float = st.floats(-1, 1, allow_nan=False)
prob = st.floats(0, 1, allow_nan=False)


def test_unit_dot_product():
    s = correlation_matrix(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), np.ones(2), np.ones(2))
    assert s.values[0, 0] == 1.0


def test_zero_weights_annihilate(rng):
    s = correlation_matrix(rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), np.zeros(4), np.ones(4))
    assert np.all(s.values == 0)


def test_weighted_term_by_term():
    s = correlation_matrix(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), [1.0, 0.5], [1.0, 1.0])
    assert s.values[0, 0] == 7.0


def test_dimension_and_value_checks():
    with pytest.raises(ConfigurationError):
        correlation_matrix(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ConfigurationError):
        correlation_matrix(np.array([[np.inf, 0.0]]), np.ones((1, 2)))
    with pytest.raises(ConfigurationError):
        correlation_matrix(np.ones((1, 2)), np.ones((1, 2)), p_v=[1.5, 0.0])
    with pytest.raises(ConfigurationError):
        aggregate_score(np.zeros((0, 2)))


def test_aggregate_examples():
    assert aggregate_score(np.array([[1.0]])) == 2.0
    assert aggregate_score(np.array([[0.5, 0.2], [0.1, 0.9]])) == pytest.approx(1.4, abs=1e-15)
    assert aggregate_score(np.zeros((3, 2))) == 0.0


def test_argmax_ties_pick_lowest_index():
    s = correlation_matrix(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert s.argmax_rows.tolist() == [0]


def test_negative_correlations_are_not_thresholded():
    assert aggregate_score(np.array([[-0.5, -0.25]])) == pytest.approx(-0.25 + (-0.5 - 0.25) / 2)


def _brute(v, t, pv, pt):
    s = np.zeros((len(v), len(t)))
    for i, j in itertools.product(range(len(v)), range(len(t))):
        s[i, j] = sum(pv[d] * v[i][d] * pt[d] * t[j][d] for d in range(len(pv)))
    rows = sum(max(s[i, j] for j in range(len(t))) for i in range(len(v))) / len(v)
    cols = sum(max(s[i, j] for i in range(len(v))) for j in range(len(t))) / len(t)
    return rows + cols


def test_two_by_two_exhaustive():
    v = [[0.6, 0.8, 0.0], [0.0, -1.0, 0.0]]
    t = [[1.0, 0.0, 0.0], [0.0, 0.6, -0.8]]
    pv, pt = [0.9, 0.5, 0.2], [1.0, 0.3, 0.7]
    assert pair_score(np.array(v), np.array(t), pv, pt) == pytest.approx(_brute(v, t, pv, pt), abs=1e-14)


@given(arrays(np.float64, (3, 4), elements=unit_float), arrays(np.float64, (2, 4), elements=unit_float))
def test_all_ones_weights_reduce_exactly(v, t):
    assert pair_score(v, t, np.ones(4), np.ones(4)) == pair_score(v, t)


@given(arrays(np.float64, (3, 5), elements=unit_float), arrays(np.float64, (4, 5), elements=unit_float),
       arrays(np.float64, 5, elements=prob), arrays(np.float64, 5, elements=prob))
def test_score_bound_for_unit_tokens(v, t, pv, pt):
    v, t = normalize_rows(v)[0], normalize_rows(t)[0]
    assert abs(pair_score(v, t, pv, pt)) <= 2.0 + 1e-12


@given(arrays(np.float64, (4, 3), elements=unit_float), arrays(np.float64, (3, 3), elements=unit_float),
       st.permutations(range(4)), st.permutations(range(3)))
def test_token_permutation_invariance(v, t, pv, pt):
    base = pair_score(v, t)
    assert pair_score(v[list(pv)], t[list(pt)]) == pytest.approx(base, abs=1e-12)


@given(arrays(np.float64, (2, 3), elements=unit_float), arrays(np.float64, (2, 3), elements=unit_float),
       arrays(np.float64, 3, elements=prob), st.integers(0, 2), st.floats(0, 1))
def test_single_weight_change_is_linear(v, t, pt, d, delta):
    pv = np.zeros(3)
    before = correlation_matrix(v, t, pv, pt).values
    pv[d] = delta
    after = correlation_matrix(v, t, pv, pt).values
    expected = pt[d] * np.outer(v[:, d], t[:, d]) * delta
    np.testing.assert_allclose(after - before, expected, atol=1e-15)


def test_embedding_sets_accepted(rng):
    v = EmbeddingSet("image", rng.standard_normal((2, 3)))
    t = EmbeddingSet("text", rng.standard_normal((2, 3)))
    assert pair_score(v, t) == pair_score(v.tokens, t.tokens)


def test_batch_scores_match_pairwise(rng):
    a = rng.standard_normal((5, 3, 4))
    b = rng.standard_normal((6, 2, 4))
    s = aggregate_batch(batch_correlations(a, b))
    for i, j in itertools.product(range(5), range(6)):
        assert s[i, j] == pytest.approx(pair_score(a[i], b[j]), abs=1e-12)


def test_score_matrix_independent_of_workers_and_chunk(rng):
    a = rng.standard_normal((9, 3, 4))
    b = rng.standard_normal((7, 2, 4))
    ref = score_matrix(a, b)
    assert np.array_equal(ref, score_matrix(a, b, chunk=2, workers=3))
    assert np.array_equal(ref, score_matrix(a, b, chunk=4, workers=1))


def test_weight_tokens_global_and_per_instance(rng):
    x = rng.standard_normal((2, 3, 4))
    p = rng.random(4)
    np.testing.assert_array_equal(weight_tokens(x, p), x * p)
    pp = rng.random((2, 4))
    np.testing.assert_array_equal(weight_tokens(x, pp)[1], x[1] * pp[1])
    assert weight_tokens(x, None) is x
