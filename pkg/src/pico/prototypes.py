"""Style prototypes refined across epochs by a feedback-weighted running average.

Each epoch from ``j0`` on clusters the column instances into fresh
pseudo-prototypes. The bank keeps ``mu = (1/m) * sum_t w_t * mu_hat_t`` over
the ``m`` epochs seen so far, where ``w_t`` grows with the most recent change
in validation rSum.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterState, kmeanspp_init, weighted_kmeans
from .errors import ConfigurationError


@dataclass
class PrototypeBank:
    modality: str
    j0: int
    J: int
    prototypes: np.ndarray | None = None  # (K, P)
    m: int = 0
    rsum_history: list[float] = field(default_factory=list)
    weight_history: list[float] = field(default_factory=list)
    pseudo_history: list[np.ndarray] = field(default_factory=list)
    last_cluster: ClusterState | None = field(default=None, repr=False)

    @property
    def j1(self) -> int:
        return self.j0 + 1

    @property
    def empty(self) -> bool:
        return self.prototypes is None

    def record_rsum(self, rsum: float) -> None:
        self.rsum_history.append(float(rsum))

    def unrolled(self) -> np.ndarray:
        """Prototypes recomputed directly from the recorded pseudo-prototypes and weights."""
        if not self.pseudo_history:
            raise ConfigurationError("bank has no recorded pseudo-prototypes")
        total = sum(w * mu for w, mu in zip(self.weight_history, self.pseudo_history))
        return total / len(self.pseudo_history)

    def summary(self) -> dict:
        return {
            "modality": self.modality,
            "j0": self.j0,
            "J": self.J,
            "m": self.m,
            "prototypes": None if self.prototypes is None else self.prototypes.tolist(),
            "rsum_history": list(self.rsum_history),
            "weight_history": list(self.weight_history),
        }


def feedback_weight(rsum_history) -> float:
    """Blend weight from the validation rSum history recorded since ``j0``.

    ``1 + (last - second_last) / mean(history)``; 1 when fewer than two values exist.
    """
    history = [float(r) for r in rsum_history]
    if len(history) < 2:
        return 1.0
    mean = sum(history) / len(history)
    if mean == 0:
        raise ConfigurationError("mean rSum is zero; feedback weight undefined")
    return 1.0 + (history[-1] - history[-2]) / mean


def blend_prototype(bank: PrototypeBank, new_pseudo, w: float) -> PrototypeBank:
    """One running-average step ``mu += (w * mu_hat - mu) / m'`` with ``m' = m + 1``."""
    new_pseudo = np.asarray(new_pseudo, dtype=np.float64)
    m_next = bank.m + 1
    if bank.prototypes is None:
        mu = w * new_pseudo
    else:
        if bank.prototypes.shape != new_pseudo.shape:
            raise ConfigurationError(f"prototype shape {bank.prototypes.shape} != {new_pseudo.shape}")
        mu = bank.prototypes + (w * new_pseudo - bank.prototypes) / m_next
    return dataclasses.replace(
        bank,
        prototypes=mu,
        m=m_next,
        weight_history=bank.weight_history + [float(w)],
        pseudo_history=bank.pseudo_history + [new_pseudo.copy()],
    )


def restart_prototype(bank: PrototypeBank, new_pseudo) -> PrototypeBank:
    """Replace the prototypes outright (no cross-epoch averaging)."""
    new_pseudo = np.asarray(new_pseudo, dtype=np.float64)
    return dataclasses.replace(
        bank,
        prototypes=new_pseudo.copy(),
        m=bank.m + 1,
        weight_history=bank.weight_history + [1.0],
        pseudo_history=bank.pseudo_history + [new_pseudo.copy()],
    )


def epoch_update(bank: PrototypeBank, epoch_instances, weights, K: int, rng: np.random.Generator, *,
                 iterative: bool = True, feedback: bool = True, max_iter: int = 50,
                 tol: float = 1e-6) -> PrototypeBank:
    """Cluster this epoch's column instances and fold the result into the bank.

    The clustering is warm-started from the current prototypes, so cluster
    ``k`` of this epoch continues cluster ``k`` of the previous one. With
    ``iterative=False`` every epoch re-seeds with k-means++ and the bank is
    overwritten; ``feedback=False`` fixes the blend weight at 1.
    """
    x = np.asarray(epoch_instances, dtype=np.float64)
    if bank.empty or not iterative:
        init = kmeanspp_init(x, weights, K, rng)
    else:
        init = bank.prototypes
    state = weighted_kmeans(x, weights, K, init_centers=init, max_iter=max_iter, tol=tol, rng=rng)
    if not iterative:
        updated = restart_prototype(bank, state.centers)
    else:
        w = feedback_weight(bank.rsum_history) if feedback else 1.0
        updated = blend_prototype(bank, state.centers, w)
    updated.last_cluster = state
    return updated
