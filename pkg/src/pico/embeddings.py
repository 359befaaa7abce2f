"""Token-level embeddings, linear projection heads and the on-disk corpus format.

A corpus directory holds ``manifest.json`` plus two row-major little-endian
float32 payloads, ``images.bin`` and ``texts.bin``, of shape
``[pair_count, n_tokens, D_raw]``. Pair ``i`` of the image payload matches
pair ``i`` of the text payload.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, CorpusFormatError

MODALITIES = ("image", "text")
FORMAT_VERSION = 1
DEGENERATE_NORM = 1e-12


def _check_modality(modality: str) -> str:
    if modality not in MODALITIES:
        raise ConfigurationError(f"unknown modality {modality!r}, expected one of {MODALITIES}")
    return modality


@dataclass(frozen=True)
class EmbeddingSet:
    """Token embeddings of one image or one text, shape (n_tokens, D)."""

    modality: str
    tokens: np.ndarray
    instance_id: int = 0
    degenerate_rows: tuple[int, ...] = ()

    def __post_init__(self):
        _check_modality(self.modality)
        tokens = np.asarray(self.tokens)
        if tokens.ndim != 2 or tokens.shape[0] < 1 or tokens.shape[1] < 1:
            raise ConfigurationError(f"tokens must be a non-empty 2-D matrix, got shape {tokens.shape}")
        if not np.all(np.isfinite(tokens)):
            raise ConfigurationError("tokens contain non-finite values")
        object.__setattr__(self, "tokens", tokens)

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass
class ProjectionHead:
    """Learnable linear map from raw backbone features (D_raw) to the shared space (D)."""

    modality: str
    weight: np.ndarray

    def __post_init__(self):
        _check_modality(self.modality)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ConfigurationError("projection weight must be a matrix")
        if not np.all(np.isfinite(self.weight)):
            raise ConfigurationError("projection weight contains non-finite values")

    @classmethod
    def random(cls, modality: str, d_raw: int, d: int, rng: np.random.Generator) -> "ProjectionHead":
        return cls(modality, rng.standard_normal((d_raw, d)) / np.sqrt(d_raw))

    @classmethod
    def fold(cls, modality: str, d_raw: int, d: int) -> "ProjectionHead":
        """Column-preserving init: output column ``k`` averages raw columns ``r`` with ``r % d == k``."""
        w = np.zeros((d_raw, d))
        rows = np.arange(d_raw)
        w[rows, rows % d] = 1.0
        w /= np.sqrt(np.maximum(w.sum(axis=0), 1.0))
        return cls(modality, w)

    @property
    def d_raw(self) -> int:
        return self.weight.shape[0]

    @property
    def d(self) -> int:
        return self.weight.shape[1]


def project(raw: EmbeddingSet, head: ProjectionHead) -> EmbeddingSet:
    """Apply ``head`` to every token row of ``raw``."""
    if raw.modality != head.modality:
        raise ConfigurationError(f"cannot project {raw.modality} tokens with a {head.modality} head")
    if raw.dim != head.d_raw:
        raise ConfigurationError(f"raw dimension {raw.dim} does not match head input {head.d_raw}")
    out = np.asarray(raw.tokens, dtype=np.float64) @ head.weight
    return EmbeddingSet(raw.modality, out, raw.instance_id)


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-normalize the last axis of ``x``.

    Returns ``(normalized, norms, degenerate)``. Rows with norm below
    ``DEGENERATE_NORM`` are passed through unchanged and marked in
    ``degenerate``; ``norms`` holds 1 for those rows so that callers can
    divide by it safely.
    """
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    degenerate = norms < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    return x / safe, safe, degenerate[..., 0]


def l2_normalize(e: EmbeddingSet) -> EmbeddingSet:
    """Scale every token to unit Euclidean norm; near-zero rows are kept and flagged."""
    normed, _, degenerate = normalize_rows(np.asarray(e.tokens, dtype=np.float64))
    flagged = tuple(int(i) for i in np.flatnonzero(degenerate))
    return EmbeddingSet(e.modality, normed, e.instance_id, flagged)


def fit_token_count(tokens: np.ndarray, n_tokens: int) -> np.ndarray:
    """Zero-pad or truncate a (n, D) token matrix to exactly ``n_tokens`` rows."""
    tokens = np.asarray(tokens)
    if n_tokens < 1:
        raise ConfigurationError("n_tokens must be >= 1")
    if tokens.shape[0] >= n_tokens:
        return tokens[:n_tokens]
    pad = np.zeros((n_tokens - tokens.shape[0], tokens.shape[1]), dtype=tokens.dtype)
    return np.concatenate([tokens, pad], axis=0)


@dataclass
class Corpus:
    """Matched image/text token embeddings stored as dense float32 arrays."""

    images: np.ndarray  # (pair_count, n_v, D_raw)
    texts: np.ndarray  # (pair_count, n_t, D_raw)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.texts = np.asarray(self.texts, dtype=np.float32)
        if self.images.ndim != 3 or self.texts.ndim != 3:
            raise ConfigurationError("corpus arrays must have shape (pairs, tokens, D_raw)")
        if self.images.shape[0] != self.texts.shape[0]:
            raise ConfigurationError("image and text pair counts differ")
        if self.images.shape[2] != self.texts.shape[2]:
            raise ConfigurationError("image and text raw dimensions differ")

    @property
    def pair_count(self) -> int:
        return self.images.shape[0]

    @property
    def d_raw(self) -> int:
        return self.images.shape[2]

    @property
    def n_v(self) -> int:
        return self.images.shape[1]

    @property
    def n_t(self) -> int:
        return self.texts.shape[1]

    def __len__(self) -> int:
        return self.pair_count

    def pair(self, i: int) -> tuple[EmbeddingSet, EmbeddingSet]:
        return (EmbeddingSet("image", self.images[i], i), EmbeddingSet("text", self.texts[i], i))

    def pairs(self) -> Iterator[tuple[EmbeddingSet, EmbeddingSet]]:
        for i in range(self.pair_count):
            yield self.pair(i)

    def subset(self, index) -> "Corpus":
        return Corpus(self.images[index], self.texts[index], dict(self.meta))

    @classmethod
    def from_pairs(cls, pairs, n_v: int | None = None, n_t: int | None = None) -> "Corpus":
        """Build a corpus from (image, text) EmbeddingSets, padding/truncating tokens."""
        pairs = list(pairs)
        if not pairs:
            raise ConfigurationError("use Corpus.empty() for an empty corpus")
        n_v = n_v or pairs[0][0].n_tokens
        n_t = n_t or pairs[0][1].n_tokens
        images = np.stack([fit_token_count(v.tokens, n_v) for v, _ in pairs])
        texts = np.stack([fit_token_count(t.tokens, n_t) for _, t in pairs])
        return cls(images, texts)

    @classmethod
    def empty(cls, d_raw: int, n_v: int, n_t: int) -> "Corpus":
        return cls(np.zeros((0, n_v, d_raw), np.float32), np.zeros((0, n_t, d_raw), np.float32))


def _write_f32(path: Path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_f32(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    try:
        size = os.path.getsize(path)
    except OSError as exc:
        raise CorpusFormatError(f"cannot read {path}: {exc}") from exc
    if size != expected:
        raise CorpusFormatError(f"{path.name} holds {size} bytes, manifest implies {expected}")
    data = np.fromfile(path, dtype="<f4")
    return data.reshape(shape).astype(np.float32, copy=False)


def save_embeddings(path, corpus: Corpus) -> Path:
    """Write ``corpus`` to directory ``path`` (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "D": corpus.d_raw,
        "n_v": corpus.n_v,
        "n_t": corpus.n_t,
        "pair_count": corpus.pair_count,
        "dtype": "f32le",
    }
    _write_f32(path / "images.bin", corpus.images)
    _write_f32(path / "texts.bin", corpus.texts)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


_MANIFEST_KEYS = {"version": int, "D": int, "n_v": int, "n_t": int, "pair_count": int, "dtype": str}


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise CorpusFormatError(f"no manifest.json in {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"corrupt manifest in {path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise CorpusFormatError("manifest must be a JSON object")
    for key, kind in _MANIFEST_KEYS.items():
        if not isinstance(manifest.get(key), kind) or isinstance(manifest.get(key), bool):
            raise CorpusFormatError(f"manifest field {key!r} missing or not {kind.__name__}")
    if manifest["dtype"] != "f32le":
        raise CorpusFormatError(f"unsupported dtype {manifest['dtype']!r}")
    if manifest["version"] != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported corpus version {manifest['version']}")
    if min(manifest["D"], manifest["n_v"], manifest["n_t"]) < 1 or manifest["pair_count"] < 0:
        raise CorpusFormatError("manifest dimensions must be positive")
    return manifest


def load_embeddings(path) -> Corpus:
    """Read a corpus directory written by :func:`save_embeddings`."""
    path = Path(path)
    m = read_manifest(path)
    images = _read_f32(path / "images.bin", (m["pair_count"], m["n_v"], m["D"]))
    texts = _read_f32(path / "texts.bin", (m["pair_count"], m["n_t"], m["D"]))
    return Corpus(images, texts)
