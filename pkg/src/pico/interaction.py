"""Patch-word correlation and maximum-correspondence aggregation.

The correlation between patch ``i`` and word ``j`` is the per-column product
``v[i, d] * t[j, d]`` summed over ``d``, optionally with each column scaled by
a semantic probability on both sides. The pair score averages, for every
patch, its best-matching word and, for every word, its best-matching patch.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet
from .errors import ConfigurationError


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray  # (n_v, n_t)
    argmax_rows: np.ndarray  # best word per patch
    argmax_cols: np.ndarray  # best patch per word

    @classmethod
    def from_values(cls, values) -> "CorrelationMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ConfigurationError("correlation matrix must be a non-empty 2-D array")
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return cls(values, np.argmax(values, axis=1), np.argmax(values, axis=0))


def _tokens(x) -> np.ndarray:
    arr = x.tokens if isinstance(x, EmbeddingSet) else x
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ConfigurationError("expected a non-empty (n_tokens, D) matrix")
    return arr


def _weights(p, dim: int) -> np.ndarray | None:
    if p is None:
        return None
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (dim,):
        raise ConfigurationError(f"probability vector has shape {p.shape}, expected ({dim},)")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ConfigurationError("probabilities must lie in [0, 1]")
    return p


def correlation_matrix(V, T, p_v=None, p_t=None) -> CorrelationMatrix:
    """Weighted interaction ``s[i, j] = sum_d p_v[d] v[i, d] p_t[d] t[j, d]``.

    ``None`` weights mean the plain, unweighted interaction.
    """
    v, t = _tokens(V), _tokens(T)
    if v.shape[1] != t.shape[1]:
        raise ConfigurationError(f"column counts differ: {v.shape[1]} vs {t.shape[1]}")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(t))):
        raise ConfigurationError("non-finite token values")
    wv, wt = _weights(p_v, v.shape[1]), _weights(p_t, t.shape[1])
    a = v if wv is None else v * wv
    b = t if wt is None else t * wt
    return CorrelationMatrix.from_values(a @ b.T)


def aggregate_score(S) -> float:
    """Mean of per-row maxima plus mean of per-column maxima."""
    if not isinstance(S, CorrelationMatrix):
        S = CorrelationMatrix.from_values(S)
    vals = S.values
    n_v, n_t = vals.shape
    rows = vals[np.arange(n_v), S.argmax_rows]
    cols = vals[S.argmax_cols, np.arange(n_t)]
    return float(rows.sum() / n_v + cols.sum() / n_t)


def pair_score(V, T, p_v=None, p_t=None) -> float:
    return aggregate_score(correlation_matrix(V, T, p_v, p_t))


def weight_tokens(tokens: np.ndarray, probs: np.ndarray | None) -> np.ndarray:
    """Scale (N, n, D) tokens column-wise by per-instance (N, D) or global (D,) probabilities."""
    if probs is None:
        return tokens
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        return tokens * probs
    return tokens * probs[:, None, :]


def batch_correlations(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """All patch-word correlations between two stacks, shape (Na, Nb, n_v, n_t)."""
    na, n_v, d = A.shape
    nb, n_t, _ = B.shape
    s = A.reshape(na * n_v, d) @ B.reshape(nb * n_t, d).T
    return s.reshape(na, n_v, nb, n_t).transpose(0, 2, 1, 3)


def aggregate_batch(s: np.ndarray) -> np.ndarray:
    """Maximum-correspondence scores for a (Na, Nb, n_v, n_t) correlation stack."""
    return s.max(axis=3).mean(axis=2) + s.max(axis=2).mean(axis=2)


def score_matrix(A: np.ndarray, B: np.ndarray, chunk: int = 128, workers: int = 1) -> np.ndarray:
    """Pair scores for every (image, text) combination of two weighted token stacks.

    ``A`` is (Na, n_v, D) and ``B`` is (Nb, n_t, D); the result is (Na, Nb).
    Images are processed in chunks; each chunk is computed independently so
    the result does not depend on ``workers``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 3 or B.ndim != 3 or A.shape[2] != B.shape[2]:
        raise ConfigurationError("score_matrix expects (N, n_tokens, D) stacks with equal D")
    out = np.empty((A.shape[0], B.shape[0]))
    starts = range(0, A.shape[0], chunk)

    def run(lo):
        out[lo:lo + chunk] = aggregate_batch(batch_correlations(A[lo:lo + chunk], B))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return out
