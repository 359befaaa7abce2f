"""Synthetic matched corpora with planted semantic and style columns.

Semantic columns carry a small set of latent concept vectors shared by both
members of a pair, rotated by a fixed random orthogonal matrix. Every token
carries one concept; concepts appear equally often within an instance, in an
independent random token order per modality.

Every other column carries a style pattern. Each instance draws a style label
(independently per modality) and its style columns copy that style's token
profile with a fixed per-column sign. With ``style_leak > 0`` the profile
also lands on a random subset of an instance's semantic columns, which no
fixed linear projection can undo. Gaussian noise is added everywhere.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .embeddings import Corpus, normalize_rows, save_embeddings
from .errors import ConfigurationError
from .interaction import score_matrix

MODALITIES = ("image", "text")


@dataclass
class SynthConfig:
    pair_count: int = 2000
    D_raw: int = 64
    D: int = 32
    n_v: int = 8
    n_t: int = 8
    semantic_column_count: int = 16
    style_cluster_count: int = 4
    style_amplitude: float = 1.0
    noise_sigma: float = 0.5
    concept_count: int = 4
    style_leak: float = 0.0
    seed: int = 7

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        counts = (self.pair_count, self.D_raw, self.D, self.n_v, self.n_t,
                  self.semantic_column_count, self.style_cluster_count)
        if min(counts) < 1:
            raise ConfigurationError("all counts must be >= 1")
        if self.semantic_column_count > self.D_raw:
            raise ConfigurationError("semantic_column_count cannot exceed D_raw")
        if self.style_amplitude < 0 or self.noise_sigma < 0:
            raise ConfigurationError("amplitudes and noise must be non-negative")
        if not 0 <= self.style_leak <= 1:
            raise ConfigurationError("style_leak must lie in [0, 1]")
        if self.concept_count < 1 or self.n_v % self.concept_count or self.n_t % self.concept_count:
            raise ConfigurationError("concept_count must divide both n_v and n_t")


@dataclass
class GroundTruth:
    semantic_columns: np.ndarray  # sorted raw column indices
    D_raw: int
    style_labels: dict  # modality -> (pair_count,) int
    style_prototypes: dict  # modality -> (styles, n_tokens, D_raw)

    def mask(self, modality: str = "image") -> np.ndarray:
        # both modalities share the semantic column layout
        m = np.zeros(self.D_raw, dtype=bool)
        m[self.semantic_columns] = True
        return m

    def to_dict(self) -> dict:
        return {
            "semantic_columns": self.semantic_columns.tolist(),
            "semantic_column_mask": {mod: self.mask(mod).astype(int).tolist() for mod in MODALITIES},
            "style_labels": {mod: v.tolist() for mod, v in self.style_labels.items()},
            "style_prototypes": {mod: v.tolist() for mod, v in self.style_prototypes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        mask = np.asarray(d["semantic_column_mask"]["image"], dtype=bool)
        return cls(np.asarray(d["semantic_columns"], dtype=np.int64), mask.size,
                   {k: np.asarray(v, dtype=np.int64) for k, v in d["style_labels"].items()},
                   {k: np.asarray(v, dtype=np.float64) for k, v in d["style_prototypes"].items()})


def _orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _token_concepts(count: int, n_tokens: int, n_concepts: int, rng: np.random.Generator) -> np.ndarray:
    base = np.tile(np.arange(n_concepts), n_tokens // n_concepts)
    return rng.permuted(np.broadcast_to(base, (count, n_tokens)), axis=1)


def generate_corpus(cfg: SynthConfig) -> tuple[Corpus, GroundTruth]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    sem = np.sort(rng.choice(cfg.D_raw, size=cfg.semantic_column_count, replace=False))
    style_cols = np.setdiff1d(np.arange(cfg.D_raw), sem)
    mixing = _orthogonal(cfg.semantic_column_count, rng)

    n_tokens = {"image": cfg.n_v, "text": cfg.n_t}
    prototypes, profiles = {}, {}
    for mod in MODALITIES:
        n = n_tokens[mod]
        protos = np.zeros((cfg.style_cluster_count, n, cfg.D_raw))
        profiles[mod] = np.zeros((cfg.style_cluster_count, n))
        for s in range(cfg.style_cluster_count):
            profile = rng.standard_normal(n)
            profile *= np.sqrt(n) / np.linalg.norm(profile)
            signs = rng.choice([-1.0, 1.0], size=style_cols.size)
            protos[s][:, style_cols] = profile[:, None] * signs[None, :]
            profiles[mod][s] = profile
        prototypes[mod] = protos

    concepts = rng.standard_normal((cfg.pair_count, cfg.concept_count, cfg.semantic_column_count)) @ mixing.T
    rows = np.arange(cfg.pair_count)[:, None]
    out, labels = {}, {}
    for mod in MODALITIES:
        n = n_tokens[mod]
        tokens = np.zeros((cfg.pair_count, n, cfg.D_raw))
        order = _token_concepts(cfg.pair_count, n, cfg.concept_count, rng)
        tokens[:, :, sem] = concepts[rows, order]
        labels[mod] = rng.integers(0, cfg.style_cluster_count, size=cfg.pair_count)
        style = prototypes[mod][labels[mod]]
        if cfg.style_leak > 0:
            # a semantic column of an instance picks up that instance's style
            # profile with probability style_leak, with a random sign
            leak = rng.random((cfg.pair_count, sem.size)) < cfg.style_leak
            signs = rng.choice([-1.0, 1.0], size=(cfg.pair_count, sem.size))
            style[:, :, sem] = profiles[mod][labels[mod]][:, :, None] * (leak * signs)[:, None, :]
        tokens += cfg.style_amplitude * style
        tokens += cfg.noise_sigma * rng.standard_normal(tokens.shape)
        out[mod] = tokens
    corpus = Corpus(out["image"], out["text"], {"synth": asdict(cfg)})
    return corpus, GroundTruth(sem, cfg.D_raw, labels, prototypes)


def write_corpus(path, corpus: Corpus, truth: GroundTruth) -> Path:
    path = save_embeddings(path, corpus)
    (path / "ground_truth.json").write_text(json.dumps(truth.to_dict()))
    return path


def load_ground_truth(path) -> GroundTruth:
    p = Path(path) / "ground_truth.json"
    if not p.exists():
        raise ConfigurationError(f"{p} not found; oracle scoring needs a synthetic corpus")
    return GroundTruth.from_dict(json.loads(p.read_text()))


def oracle_scores(corpus: Corpus, truth: GroundTruth, workers: int = 1) -> np.ndarray:
    """Score matrix using only the planted semantic columns of the raw tokens."""
    cols = truth.semantic_columns
    a = normalize_rows(corpus.images[:, :, cols].astype(np.float64))[0]
    b = normalize_rows(corpus.texts[:, :, cols].astype(np.float64))[0]
    return score_matrix(a, b, workers=workers)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ConfigurationError("AUC needs both semantic and non-semantic columns")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def raw_column_scores(column_probs, head_weight=None) -> np.ndarray:
    """Map per-column probabilities into raw column space.

    Without a head the probabilities are returned as is (they must already
    be indexed by raw column). With a (D_raw, D) head, raw column ``r`` gets
    the average of the projected probabilities weighted by ``W[r, d]**2``.
    """
    p = np.asarray(column_probs, dtype=np.float64)
    if head_weight is None:
        return p
    w2 = np.asarray(head_weight, dtype=np.float64) ** 2
    if w2.shape[1] != p.size:
        raise ConfigurationError("head output size does not match probability length")
    return (w2 @ p) / w2.sum(axis=1)


def score_column_ranking(column_probs, truth: GroundTruth, head_weight=None, modality: str = "image") -> float:
    """AUC of ranking raw columns by mean semantic probability against the planted mask."""
    return roc_auc(raw_column_scores(column_probs, head_weight), truth.mask(modality))
