import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pico.embeddings import (Corpus, EmbeddingSet, ProjectionHead, fit_token_count, l2_normalize,
                             load_embeddings, normalize_rows, project, read_manifest, save_embeddings)
from pico.errors import ConfigurationError, CorpusFormatError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_identity_projection_returns_input(rng):
    x = rng.standard_normal((5, 4))
    out = project(EmbeddingSet("image", x), ProjectionHead("image", np.eye(4)))
    np.testing.assert_array_equal(out.tokens, x)


def test_zero_projection_is_zero(rng):
    out = project(EmbeddingSet("text", rng.standard_normal((3, 4))), ProjectionHead("text", np.zeros((4, 2))))
    assert np.all(out.tokens == 0)


def test_small_projection_by_hand():
    raw = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 2.0]])
    w = np.array([[1.0, 0.0], [0.5, 2.0], [0.0, -1.0]])
    expected = [[1 + 1.0, 4 - 3.0], [-1.0, -2.0]]
    np.testing.assert_allclose(project(EmbeddingSet("image", raw), ProjectionHead("image", w)).tokens, expected)


def test_projection_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        project(EmbeddingSet("image", np.ones((2, 3))), ProjectionHead("image", np.ones((4, 2))))
    with pytest.raises(ConfigurationError):
        project(EmbeddingSet("image", np.ones((2, 3))), ProjectionHead("text", np.ones((3, 2))))


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       finite, finite)
def test_projection_is_linear(x, y, a, b):
    head = ProjectionHead("image", np.random.default_rng(0).standard_normal((4, 3)))
    lhs = project(EmbeddingSet("image", a * x + b * y), head).tokens
    rhs = a * project(EmbeddingSet("image", x), head).tokens + b * project(EmbeddingSet("image", y), head).tokens
    scale = np.abs(a * x).max() + np.abs(b * y).max() + 1.0
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * scale * 10)


def test_normalize_known_rows():
    e = l2_normalize(EmbeddingSet("image", np.array([[3.0, 4.0], [1.0, 0.0], [0.0, 0.0]])))
    np.testing.assert_allclose(e.tokens[0], [0.6, 0.8])
    np.testing.assert_array_equal(e.tokens[1], [1.0, 0.0])
    np.testing.assert_array_equal(e.tokens[2], [0.0, 0.0])
    assert e.degenerate_rows == (2,)


@given(arrays(np.float64, (4, 5), elements=finite))
def test_normalize_idempotent(x):
    once = l2_normalize(EmbeddingSet("text", x))
    twice = l2_normalize(once)
    keep = [i for i in range(4) if i not in once.degenerate_rows]
    np.testing.assert_allclose(twice.tokens[keep], once.tokens[keep], atol=1e-12)


def test_normalize_rows_reports_safe_norms():
    _, norms, degenerate = normalize_rows(np.array([[0.0, 0.0], [0.0, 2.0]]))
    assert norms[:, 0].tolist() == [1.0, 2.0]
    assert degenerate.tolist() == [True, False]


def test_fit_token_count_pads_and_truncates():
    x = np.arange(6.0).reshape(3, 2)
    assert fit_token_count(x, 5).shape == (5, 2)
    assert np.all(fit_token_count(x, 5)[3:] == 0)
    np.testing.assert_array_equal(fit_token_count(x, 2), x[:2])


def _corpus(rng, n=7):
    return Corpus(rng.standard_normal((n, 3, 5)), rng.standard_normal((n, 4, 5)))


def test_roundtrip_bitwise(tmp_path, rng):
    c = _corpus(rng)
    loaded = load_embeddings(save_embeddings(tmp_path / "c", c))
    assert loaded.images.tobytes() == c.images.tobytes()
    assert loaded.texts.tobytes() == c.texts.tobytes()
    assert (loaded.n_v, loaded.n_t, loaded.d_raw) == (3, 4, 5)


def test_payload_is_little_endian_f32(tmp_path):
    c = Corpus(np.full((1, 1, 2), 1.5), np.full((1, 1, 2), -2.0))
    save_embeddings(tmp_path, c)
    assert (tmp_path / "images.bin").read_bytes() == np.array([1.5, 1.5], "<f4").tobytes()


def test_empty_corpus_roundtrip(tmp_path):
    save_embeddings(tmp_path, Corpus.empty(4, 2, 3))
    assert read_manifest(tmp_path)["pair_count"] == 0
    assert load_embeddings(tmp_path).pair_count == 0


def test_count_mismatch_rejected(tmp_path, rng):
    save_embeddings(tmp_path, _corpus(rng))
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["pair_count"] += 1
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(CorpusFormatError):
        load_embeddings(tmp_path)


@pytest.mark.parametrize("patch", [{"dtype": "f64le"}, {"version": 99}, {"D": "5"}, {"n_v": 0}])
def test_bad_manifest_fields(tmp_path, rng, patch):
    save_embeddings(tmp_path, _corpus(rng))
    m = json.loads((tmp_path / "manifest.json").read_text())
    m.update(patch)
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(CorpusFormatError):
        load_embeddings(tmp_path)


def test_corrupt_or_missing_files(tmp_path, rng):
    with pytest.raises(CorpusFormatError):
        load_embeddings(tmp_path)
    save_embeddings(tmp_path, _corpus(rng))
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(CorpusFormatError):
        load_embeddings(tmp_path)
    save_embeddings(tmp_path, _corpus(rng))
    (tmp_path / "texts.bin").unlink()
    with pytest.raises(CorpusFormatError):
        load_embeddings(tmp_path)


def test_non_finite_tokens_rejected():
    with pytest.raises(ConfigurationError):
        EmbeddingSet("image", np.array([[np.nan, 1.0]]))


def test_corpus_shape_checks():
    with pytest.raises(ConfigurationError):
        Corpus(np.zeros((2, 3, 4)), np.zeros((3, 3, 4)))
    with pytest.raises(ConfigurationError):
        Corpus(np.zeros((2, 3, 4)), np.zeros((2, 3, 5)))


def test_from_pairs_pads_tokens(rng):
    pairs = [(EmbeddingSet("image", rng.standard_normal((2, 3))), EmbeddingSet("text", rng.standard_normal((5, 3))))]
    c = Corpus.from_pairs(pairs, n_v=3, n_t=4)
    assert c.images.shape == (1, 3, 3) and c.texts.shape == (1, 4, 3)


def test_fold_head_preserves_column_groups():
    w = ProjectionHead.fold("image", 6, 3).weight
    np.testing.assert_allclose(w.T @ w, np.eye(3))
    assert np.count_nonzero(w) == 6
