"""Retrieval metrics (R@K, rSum) and score-distribution export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

DIRECTIONS = ("i2t", "t2i")
KS = (1, 5, 10)


def true_match_ranks(scores, direction: str) -> np.ndarray:
    """0-based rank of the diagonal match for every query.

    Candidates are ordered by descending score; a candidate with the same
    score as the true match ranks ahead of it only if its index is lower.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] == 0:
        raise ConfigurationError("scores must be a non-empty square matrix")
    if direction == "t2i":
        s = s.T
    elif direction != "i2t":
        raise ConfigurationError(f"direction must be one of {DIRECTIONS}")
    n = s.shape[0]
    diag = np.diag(s)[:, None]
    lower = np.arange(n)[None, :] < np.arange(n)[:, None]
    return ((s > diag) | ((s == diag) & lower)).sum(axis=1)


def recall_at_k(scores, direction: str, k: int) -> float:
    n = np.shape(scores)[0]
    if k < 1 or k > n:
        raise ConfigurationError(f"K={k} outside [1, {n}]")
    ranks = true_match_ranks(scores, direction)
    return 100.0 * float(np.count_nonzero(ranks < k)) / n


@dataclass
class RetrievalReport:
    r_at: dict = field(default_factory=dict)  # "i2t@1" -> percentage
    rsum: float = 0.0
    n_queries: int = 0

    def recall(self, direction: str, k: int) -> float:
        return self.r_at[f"{direction}@{k}"]

    def to_dict(self) -> dict:
        return {"r_at": dict(self.r_at), "rsum": self.rsum, "n_queries": self.n_queries}


def rsum_report(scores, clip_k: bool = False) -> RetrievalReport:
    """All six recalls and their sum.

    With ``clip_k`` a cutoff larger than the number of queries is treated as
    the full list (recall 100), which keeps tiny validation splits usable.
    """
    n = np.shape(scores)[0]
    r_at = {}
    for direction in DIRECTIONS:
        ranks = true_match_ranks(scores, direction)
        for k in KS:
            if k > n and not clip_k:
                raise ConfigurationError(f"K={k} exceeds the {n} available candidates")
            r_at[f"{direction}@{k}"] = 100.0 * float(np.count_nonzero(ranks < k)) / n
    return RetrievalReport(r_at, float(sum(r_at.values())), n)


def _minmax(a: np.ndarray, b: np.ndarray):
    lo = min(a.min(initial=np.inf), b.min(initial=np.inf))
    hi = max(a.max(initial=-np.inf), b.max(initial=-np.inf))
    span = hi - lo
    if not np.isfinite(span) or span <= 0:
        return np.zeros_like(a), np.zeros_like(b)
    return (a - lo) / span, (b - lo) / span


def score_distribution(weighted: np.ndarray, unweighted: np.ndarray, mismatches: np.ndarray):
    """Matched and mismatched score series from two full score matrices.

    ``mismatches`` is an (M, 2) array of (image, text) index pairs with
    image != text. Each weighted/unweighted matched+mismatched pair of series
    is min-max normalized jointly.
    """
    n = weighted.shape[0]
    diag = np.arange(n)
    out = {}
    for name, s in (("weighted", weighted), ("unweighted", unweighted)):
        matched = s[diag, diag]
        mism = s[mismatches[:, 0], mismatches[:, 1]] if len(mismatches) else np.zeros(0)
        out[f"matched_{name}"], out[f"mismatched_{name}"] = _minmax(matched, mism)
    return out


def sample_mismatches(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    img = rng.integers(0, n, size=count)
    shift = rng.integers(1, n, size=count)
    return np.stack([img, (img + shift) % n], axis=1)


def write_distribution_csv(path, series: dict, mismatches: np.ndarray) -> Path:
    """CSV with header ``series,pair_id,score``.

    Matched rows use the pair index as ``pair_id``; mismatched rows use
    ``image:text``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "pair_id", "score"])
        for name, values in series.items():
            if name.startswith("matched"):
                ids = [str(i) for i in range(len(values))]
            else:
                ids = [f"{a}:{b}" for a, b in mismatches]
            for pid, v in zip(ids, values):
                writer.writerow([name, pid, repr(float(v))])
    return path


def export_score_distribution(state, corpus, path, mismatch_count: int | None = None, seed: int = 0) -> Path:
    """Write matched vs mismatched aggregate scores, weighted and unweighted.

    ``state`` is anything with a ``scores(corpus, weighted=...)`` method, such
    as a trained ``TrainState``. By default one mismatched pair is sampled per
    matched pair, so each weighting mode contributes ``2 * pair_count`` rows.
    """
    n = corpus.pair_count
    count = n if mismatch_count is None else mismatch_count
    mismatches = sample_mismatches(n, count, np.random.default_rng(seed))
    series = score_distribution(state.scores(corpus, weighted=True), state.scores(corpus, weighted=False), mismatches)
    return write_distribution_csv(path, series, mismatches)
