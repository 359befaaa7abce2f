"""Weighted k-means over feature-column instances.

Every instance carries a non-negative weight (the pseudo-style probability of
its column). Centers are weighted means of their members and the energy is
the weighted sum of squared distances to the assigned center.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

_ASSIGN_CHUNK = 8192


@dataclass
class ClusterState:
    centers: np.ndarray  # (K, P)
    assignment: np.ndarray  # (n,) cluster index per instance
    energy: float
    iterations_run: int
    energy_history: list[float] = field(default_factory=list)
    reseeded: int = 0

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    def indicator(self) -> np.ndarray:
        """Dense binary membership matrix (n, K)."""
        m = np.zeros((self.assignment.size, self.n_clusters), dtype=np.int8)
        m[np.arange(self.assignment.size), self.assignment] = 1
        return m


def _check(instances, centers=None):
    x = np.asarray(instances, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigurationError("instance set must be a non-empty (n, P) matrix")
    if centers is None:
        return x, None
    c = np.asarray(centers, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] == 0:
        raise ConfigurationError("need at least one center")
    if c.shape[1] != x.shape[1]:
        raise ConfigurationError(f"instance length {x.shape[1]} != center length {c.shape[1]}")
    return x, c


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # explicit differences rather than the |x|^2 - 2xc + |c|^2 expansion, so
    # assignment and energy agree to the last bit
    out = np.empty((x.shape[0], c.shape[0]))
    for k in range(c.shape[0]):
        diff = x - c[k]
        out[:, k] = np.einsum("np,np->n", diff, diff)
    return out


def assign_instances(instances, centers) -> np.ndarray:
    """Nearest center by squared Euclidean distance; ties go to the lowest index."""
    x, c = _check(instances, centers)
    out = np.empty(x.shape[0], dtype=np.int64)
    for lo in range(0, x.shape[0], _ASSIGN_CHUNK):
        out[lo:lo + _ASSIGN_CHUNK] = np.argmin(_sq_dist(x[lo:lo + _ASSIGN_CHUNK], c), axis=1)
    return out


def _residuals(x, assignment, centers):
    diff = x - centers[assignment]
    return np.einsum("np,np->n", diff, diff)


def cluster_energy(instances, assignment, centers, weights) -> float:
    """Weighted within-cluster sum of squares, ``sum_n w_n ||x_n - c_{a(n)}||^2``."""
    x, c = _check(instances, centers)
    assignment = np.asarray(assignment)
    w = np.asarray(weights, dtype=np.float64)
    if assignment.shape != (x.shape[0],) or w.shape != (x.shape[0],):
        raise ConfigurationError("assignment and weights must have one entry per instance")
    return float(np.dot(w, _residuals(x, assignment, c)))


def _update(x, assignment, w, k, previous=None):
    wx = w[:, None] * x
    sums = np.stack([np.bincount(assignment, weights=wx[:, p], minlength=k) for p in range(x.shape[1])], axis=1)
    totals = np.bincount(assignment, weights=w, minlength=k)
    centers = np.zeros_like(sums)
    live = totals > 0
    centers[live] = sums[live] / totals[live, None]
    dead = np.flatnonzero(~live)
    if dead.size:
        if previous is None:
            raise ConfigurationError(f"clusters {dead.tolist()} have zero total weight")
        # reseed from the instances worst served by their current center
        ref = previous.copy()
        ref[live] = centers[live]
        score = w * _residuals(x, assignment, ref)
        if not np.any(score > 0):
            score = _residuals(x, assignment, ref)
        order = np.argsort(-score, kind="stable")
        for slot, idx in zip(dead, order):
            centers[slot] = x[idx]
        logger.debug("reseeded %d empty clusters", dead.size)
    return centers, dead.size


def update_centers(instances, assignment, weights, n_clusters: int | None = None, previous=None) -> np.ndarray:
    """Weighted mean of each cluster's members.

    A cluster whose members have zero total weight is re-seeded from the
    instance with the largest weighted distance to its center under
    ``previous``; without ``previous`` that case raises.
    """
    x, _ = _check(instances)
    assignment = np.asarray(assignment, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ConfigurationError("weights must be non-negative")
    k = n_clusters if n_clusters is not None else int(assignment.max()) + 1
    prev = None if previous is None else np.asarray(previous, dtype=np.float64)
    return _update(x, assignment, w, k, prev)[0]


def kmeanspp_init(instances, weights, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with sampling probabilities scaled by instance weight."""
    x, _ = _check(instances)
    w = np.asarray(weights, dtype=np.float64)
    if n_clusters < 1:
        raise ConfigurationError("K must be >= 1")
    if not np.any(w > 0):
        raise ConfigurationError("all weights are zero")
    centers = np.empty((n_clusters, x.shape[1]))
    first = rng.choice(x.shape[0], p=w / w.sum())
    centers[0] = x[first]
    closest = np.einsum("np,np->n", x - centers[0], x - centers[0])
    for k in range(1, n_clusters):
        score = w * closest
        total = score.sum()
        if total <= 0:
            # every weighted instance already coincides with a center
            idx = rng.choice(x.shape[0], p=w / w.sum())
        else:
            idx = rng.choice(x.shape[0], p=score / total)
        centers[k] = x[idx]
        d = x - centers[k]
        closest = np.minimum(closest, np.einsum("np,np->n", d, d))
    return centers


def weighted_kmeans(instances, weights, n_clusters: int, init_centers=None, max_iter: int = 50,
                    tol: float = 1e-6, rng: np.random.Generator | None = None) -> ClusterState:
    """Alternate nearest-center assignment and weighted-mean updates.

    ``energy_history[0]`` is the energy of the initial centers under their
    own assignment; each further entry follows one update/assign sweep.
    Stops once an iteration improves the energy by less than ``tol``; a sweep
    that would raise the energy (possible only through rounding) is discarded.
    """
    x, _ = _check(instances)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (x.shape[0],):
        raise ConfigurationError("need one weight per instance")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigurationError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ConfigurationError("all weights are zero")
    if n_clusters < 1:
        raise ConfigurationError("K must be >= 1")
    if max_iter < 1:
        raise ConfigurationError("max_iter must be >= 1")
    if init_centers is None:
        init_centers = kmeanspp_init(x, w, n_clusters, rng if rng is not None else np.random.default_rng(0))
    _, centers = _check(x, init_centers)
    if centers.shape[0] != n_clusters:
        raise ConfigurationError(f"init has {centers.shape[0]} centers, expected {n_clusters}")
    centers = centers.copy()

    assignment = assign_instances(x, centers)
    history = [cluster_energy(x, assignment, centers, w)]
    reseeded = 0
    iterations = 0
    for _ in range(max_iter):
        new_centers, n_dead = _update(x, assignment, w, n_clusters, centers)
        new_assignment = assign_instances(x, new_centers)
        energy = cluster_energy(x, new_assignment, new_centers, w)
        iterations += 1
        if energy > history[-1]:
            # only rounding can raise the energy here; keep the previous sweep
            break
        centers, assignment = new_centers, new_assignment
        reseeded += n_dead
        history.append(energy)
        if history[-2] - history[-1] < tol:
            break
    return ClusterState(centers, assignment, history[-1], iterations, history, reseeded)


def subsample(n: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted uniform sample of at most ``cap`` indices out of ``n``."""
    if n <= cap:
        return np.arange(n)
    return np.sort(rng.choice(n, size=cap, replace=False))
