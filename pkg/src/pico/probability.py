"""Pseudo-semantic, style and semantic probabilities of feature columns."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .embeddings import EmbeddingSet
from .errors import ConfigurationError

SIGN_MODES = ("negated_exponent", "paper_literal")


@dataclass
class ProbabilityState:
    """Probabilities for one modality.

    ``pseudo_style`` is stored explicitly (rather than derived on access) so it
    can be serialized; it is always ``1 - pseudo_semantic``.
    """

    modality: str
    pseudo_semantic: np.ndarray
    epsilon: float | None = None
    sign_mode: str = "negated_exponent"
    per_instance_semantic: dict[int, np.ndarray] = field(default_factory=dict)
    epoch: int = 0

    def __post_init__(self):
        self.pseudo_semantic = np.asarray(self.pseudo_semantic, dtype=np.float64)
        self.pseudo_style = 1.0 - self.pseudo_semantic
        if self.sign_mode not in SIGN_MODES:
            raise ConfigurationError(f"unknown sign_mode {self.sign_mode!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "epoch": self.epoch,
            "epsilon": self.epsilon,
            "sign_mode": self.sign_mode,
            "pseudo_semantic": self.pseudo_semantic.tolist(),
            "pseudo_style": self.pseudo_style.tolist(),
        }


def _stack(items, which: int) -> np.ndarray:
    arrs = [np.asarray(p[which].tokens if isinstance(p[which], EmbeddingSet) else p[which]) for p in items]
    return np.stack(arrs).astype(np.float64)


def positive_fraction(images: np.ndarray, texts: np.ndarray) -> np.ndarray:
    """Per-pair fraction of strictly positive column products, shape (N, D).

    ``v*t > 0`` exactly when both factors are strictly positive or both are
    strictly negative, so the count over all (i, j) factorizes into
    per-column sign counts on each side.
    """
    n_v, n_t = images.shape[1], texts.shape[1]
    pos_v = (images > 0).sum(axis=1)
    neg_v = (images < 0).sum(axis=1)
    pos_t = (texts > 0).sum(axis=1)
    neg_t = (texts < 0).sum(axis=1)
    return (pos_v * pos_t + neg_v * neg_t) / (n_v * n_t)


def pseudo_semantic_probability(matched_pairs) -> np.ndarray:
    """Average over matched pairs of the fraction of positive interaction terms per column.

    ``matched_pairs`` is either a sequence of (image, text) EmbeddingSets /
    arrays, or a tuple ``(images, texts)`` of (N, n, D) stacks.
    """
    if isinstance(matched_pairs, tuple) and len(matched_pairs) == 2 and np.ndim(matched_pairs[0]) == 3:
        images = np.asarray(matched_pairs[0], dtype=np.float64)
        texts = np.asarray(matched_pairs[1], dtype=np.float64)
    else:
        items = list(matched_pairs)
        if not items:
            raise ConfigurationError("need at least one matched pair")
        images, texts = _stack(items, 0), _stack(items, 1)
    if images.shape[0] == 0:
        raise ConfigurationError("need at least one matched pair")
    if images.shape[0] != texts.shape[0] or images.shape[2] != texts.shape[2]:
        raise ConfigurationError("inconsistent pair stacks")
    return positive_fraction(images, texts).mean(axis=0)


def _logistic_argument(delta2, epsilon: float, sign_mode: str):
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be positive")
    if sign_mode == "negated_exponent":
        return -np.asarray(delta2, dtype=np.float64) / epsilon
    if sign_mode == "paper_literal":
        return np.asarray(delta2, dtype=np.float64) / epsilon
    raise ConfigurationError(f"unknown sign_mode {sign_mode!r}")


def nearest_prototype(columns: np.ndarray, prototypes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared distance to, and index of, the nearest prototype for each column instance.

    ``columns`` has shape (..., P), ``prototypes`` (K, P).
    """
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if prototypes.ndim != 2 or prototypes.shape[0] == 0:
        raise ConfigurationError("prototype bank is empty")
    columns = np.asarray(columns, dtype=np.float64)
    if columns.shape[-1] != prototypes.shape[1]:
        raise ConfigurationError(
            f"column instance length {columns.shape[-1]} != prototype length {prototypes.shape[1]}")
    diff = columns[..., None, :] - prototypes
    d2 = np.einsum("...kp,...kp->...k", diff, diff)
    idx = np.argmin(d2, axis=-1)
    return np.take_along_axis(d2, idx[..., None], axis=-1)[..., 0], idx


def style_probability_from_distance(delta2, epsilon: float, sign_mode: str = "negated_exponent"):
    return expit(_logistic_argument(delta2, epsilon, sign_mode))


def style_probability(column_instance, prototypes, epsilon: float, sign_mode: str = "negated_exponent"):
    """Logistic of the scaled squared distance to the nearest style prototype.

    In ``negated_exponent`` mode closer columns get higher style probability;
    ``paper_literal`` keeps the positive exponent.
    """
    delta2, _ = nearest_prototype(column_instance, prototypes)
    q = style_probability_from_distance(delta2, epsilon, sign_mode)
    return float(q) if np.ndim(q) == 0 else q


def to_semantic(q):
    """Semantic probability as the complement of style probability."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(~np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
        raise ConfigurationError("style probabilities must lie in [0, 1]")
    p = 1.0 - q
    return float(p) if p.ndim == 0 else p


def column_instances(tokens: np.ndarray) -> np.ndarray:
    """(N, n_tokens, D) token stacks -> (N, D, n_tokens) column instances."""
    return np.ascontiguousarray(np.swapaxes(tokens, -1, -2))


def median_epsilon(delta2: np.ndarray) -> float:
    eps = float(np.median(delta2))
    # all columns sitting on a prototype would give 0
    return eps if eps > 0 else 1.0


def instance_semantic_probabilities(tokens: np.ndarray, prototypes: np.ndarray, epsilon: float | None,
                                    sign_mode: str = "negated_exponent"):
    """Per-instance semantic probabilities for a (N, n, D) token stack.

    Returns ``(p, delta2, assignment, epsilon)``, with ``p`` of shape (N, D).
    When ``epsilon`` is None the median squared distance is used.
    """
    delta2, assignment = nearest_prototype(column_instances(tokens), prototypes)
    if epsilon is None:
        epsilon = median_epsilon(delta2)
    q = style_probability_from_distance(delta2, epsilon, sign_mode)
    return 1.0 - q, delta2, assignment, epsilon
