"""Triplet training of the two projection heads with probability-weighted interaction.

The loss for a batch is the sum over anchors of two hinge terms (one sampled
negative text, one sampled negative image) plus, once style prototypes
exist, ``omega_c`` times the weighted clustering energy of the batch's
column instances around frozen centers. Gradients are computed by hand:
hinges gate, maxima route through their recorded argmax, and probabilities,
prototypes and cluster assignments are constants.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln

from .clustering import subsample
from .embeddings import Corpus, ProjectionHead, normalize_rows
from .errors import ConfigurationError, NumericalError
from .evaluation import RetrievalReport, rsum_report
from .interaction import aggregate_batch, batch_correlations, score_matrix, weight_tokens
from .probability import (
    SIGN_MODES,
    ProbabilityState,
    column_instances,
    instance_semantic_probabilities,
    nearest_prototype,
    pseudo_semantic_probability,
)
from .prototypes import PrototypeBank, epoch_update

logger = logging.getLogger(__name__)

NEG_STRATEGIES = ("hardest_in_batch", "distance_weighted")
ABLATIONS = ("wei", "pro", "ite", "fed")
MODALITIES = ("image", "text")
HEAD_INITS = ("fold", "random")


@dataclass
class TrainConfig:
    alpha: float = 0.2
    omega_c: float = 5.0
    j0: int = 10
    J: int = 30
    batch_size: int = 64
    learning_rate: float = 2e-4
    momentum: float = 0.0
    neg_strategy: str = "distance_weighted"
    dw_clamp: float = 1e4
    dw_cutoff: float = 0.5
    seed: int = 0
    K: int = 20
    D: int = 512
    head_init: str = "fold"
    epsilon_mode: str = "median"
    epsilon: float = 1.0
    sign_mode: str = "negated_exponent"
    normalize_tokens: bool = True
    val_fraction: float = 0.1
    cluster_cap: int = 50_000
    kmeans_max_iter: int = 50
    kmeans_tol: float = 1e-6
    ablate: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.j0 < self.J:
            raise ConfigurationError(f"need 0 < j0 < J, got j0={self.j0}, J={self.J}")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        if self.omega_c < 0:
            raise ConfigurationError("omega_c must be >= 0")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError("learning_rate must be > 0 and momentum in [0, 1)")
        if self.neg_strategy not in NEG_STRATEGIES:
            raise ConfigurationError(f"neg_strategy must be one of {NEG_STRATEGIES}")
        if self.sign_mode not in SIGN_MODES:
            raise ConfigurationError(f"sign_mode must be one of {SIGN_MODES}")
        if self.epsilon_mode not in ("median", "fixed"):
            raise ConfigurationError("epsilon_mode must be 'median' or 'fixed'")
        if self.epsilon_mode == "fixed" and not self.epsilon > 0:
            raise ConfigurationError("fixed epsilon must be positive")
        if self.head_init not in HEAD_INITS:
            raise ConfigurationError(f"head_init must be one of {HEAD_INITS}")
        if self.K < 1 or self.D < 1:
            raise ConfigurationError("K and D must be >= 1")
        if self.ablate is not None and self.ablate not in ABLATIONS:
            raise ConfigurationError(f"ablate must be one of {ABLATIONS}")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in (0, 1)")
        if self.dw_clamp <= 0 or self.dw_cutoff < 0:
            raise ConfigurationError("dw_clamp must be > 0 and dw_cutoff >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# loss terms


def triplet_loss(s_pos: float, s_neg_text: float, s_neg_image: float, alpha: float) -> float:
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    return max(alpha - s_pos + s_neg_text, 0.0) + max(alpha - s_pos + s_neg_image, 0.0)


def total_loss(L_x: float, L_c: float, omega_c: float, epoch: int, j0: int) -> float:
    if epoch < j0:
        return L_x
    return L_x + omega_c * L_c


def clustering_loss_term(tokens: np.ndarray, assignment: np.ndarray, centers: np.ndarray,
                         qhat: np.ndarray) -> float:
    """Weighted energy of (N, n, D) embeddings' column instances around frozen centers.

    ``assignment`` is (N, D), ``centers`` (K, n), ``qhat`` (D,).
    """
    if centers is None or assignment is None:
        raise ConfigurationError("no prototype state; clustering loss needs epoch >= j0")
    diff = column_instances(tokens) - centers[assignment]
    return float(np.einsum("d,ndp,ndp->", qhat, diff, diff))


def _log_sphere_distance_density(d: np.ndarray, dim: int) -> np.ndarray:
    # density of pairwise distances between uniform points on the unit sphere in R^dim
    log_z = (dim - 2) * math.log(2.0) + betaln((dim - 1) / 2, (dim - 1) / 2)
    return (dim - 2) * np.log(d) + (dim - 3) / 2 * np.log(1.0 - d * d / 4.0) - log_z


def distance_weights(scores: np.ndarray, dim: int, clamp: float, cutoff: float) -> np.ndarray:
    """Unnormalized sampling weights ``min(clamp, 1/q(d))`` for candidate scores.

    A pair score in [-2, 2] is read as twice a cosine similarity, giving the
    unit-sphere distance ``d = sqrt(2 - score)``; ``d`` is clipped to
    ``[cutoff, 2)``.
    """
    if dim < 4:
        raise ConfigurationError("distance-weighted sampling needs dim >= 4")
    d = np.sqrt(np.clip(2.0 - np.asarray(scores, dtype=np.float64), 0.0, 4.0))
    d = np.clip(d, max(cutoff, 1e-6), 2.0 - 1e-6)
    log_w = np.minimum(math.log(clamp), -_log_sphere_distance_density(d, dim))
    return np.exp(log_w - log_w.max(axis=-1, keepdims=True))


def _sample_rows(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(weights, axis=1)
    u = rng.random(weights.shape[0]) * cum[:, -1]
    idx = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(idx, weights.shape[1] - 1)


def sample_negatives(scores, strategy: str = "hardest_in_batch", rng: np.random.Generator | None = None,
                     dim: int = 512, clamp: float = 1e4, cutoff: float = 0.5):
    """Negative text for each image anchor and negative image for each text anchor.

    ``scores[i, j]`` scores image ``i`` against text ``j``; the diagonal holds
    the positives and is never selected.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = s.shape[0]
    if s.ndim != 2 or s.shape[1] != n or n < 2:
        raise ConfigurationError("need a square score matrix over a batch of at least 2 pairs")
    eye = np.eye(n, dtype=bool)
    if strategy == "hardest_in_batch":
        masked = np.where(eye, -np.inf, s)
        return np.argmax(masked, axis=1), np.argmax(masked, axis=0)
    if strategy != "distance_weighted":
        raise ConfigurationError(f"unknown negative strategy {strategy!r}")
    if rng is None:
        raise ConfigurationError("distance-weighted sampling needs an rng")
    out = []
    for mat in (s, s.T):
        w = distance_weights(mat, dim, clamp, cutoff)
        w[eye] = 0.0
        out.append(_sample_rows(w, rng))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class FrozenClusters:
    """Centers, column assignments and column weights fixed for one epoch."""

    centers: np.ndarray  # (K, n_tokens)
    assignment: np.ndarray  # (N_train, D)
    qhat: np.ndarray  # (D,)


@dataclass
class BatchResult:
    loss: float
    L_x: float
    L_c: float
    grads: dict
    negatives: tuple
    scores: np.ndarray


def embed(weight: np.ndarray, raw: np.ndarray, normalize: bool):
    """Project (N, n, D_raw) tokens; returns (unit_tokens, norms, degenerate)."""
    u = np.asarray(raw, dtype=np.float64) @ weight
    if not normalize:
        return u, np.ones(u.shape[:-1] + (1,)), np.zeros(u.shape[:-1], dtype=bool)
    return normalize_rows(u)


def _route(s: np.ndarray) -> np.ndarray:
    """d score / d correlation for a stack of (n_v, n_t) matrices."""
    p, n_v, n_t = s.shape
    r = np.zeros_like(s)
    rows = np.argmax(s, axis=2)
    cols = np.argmax(s, axis=1)
    pi = np.arange(p)[:, None]
    np.add.at(r, (pi, np.arange(n_v)[None, :], rows), 1.0 / n_v)
    np.add.at(r, (pi, cols, np.arange(n_t)[None, :]), 1.0 / n_t)
    return r


def _normalize_backward(grad_unit, unit, norms, degenerate, normalize):
    if not normalize:
        return grad_unit
    radial = np.sum(unit * grad_unit, axis=-1, keepdims=True)
    out = (grad_unit - unit * radial) / norms
    return np.where(degenerate[..., None], grad_unit, out)


def forward_backward(weights: dict, images: np.ndarray, texts: np.ndarray, cfg: TrainConfig, *,
                     probs: dict | None = None, clusters: dict | None = None, omega_c: float = 0.0,
                     negatives=None, rng: np.random.Generator | None = None,
                     need_grad: bool = True) -> BatchResult:
    """Loss and head gradients for one batch.

    ``weights`` maps modality to its (D_raw, D) head matrix, ``probs`` maps
    modality to (B, D) semantic probabilities (missing means all ones) and
    ``clusters`` maps modality to ``(centers, assignment, qhat)`` for the
    batch rows. Negatives are sampled unless given.
    """
    probs = probs or {}
    unit, norms, deg = {}, {}, {}
    raw = {"image": np.asarray(images, dtype=np.float64), "text": np.asarray(texts, dtype=np.float64)}
    for mod in MODALITIES:
        unit[mod], norms[mod], deg[mod] = embed(weights[mod], raw[mod], cfg.normalize_tokens)
    a = weight_tokens(unit["image"], probs.get("image"))
    b = weight_tokens(unit["text"], probs.get("text"))
    s = batch_correlations(a, b)
    scores = aggregate_batch(s)
    n = scores.shape[0]
    if negatives is None:
        negatives = sample_negatives(scores, cfg.neg_strategy, rng, dim=a.shape[2],
                                     clamp=cfg.dw_clamp, cutoff=cfg.dw_cutoff)
    neg_text, neg_image = (np.asarray(x) for x in negatives)
    k = np.arange(n)
    pos = scores[k, k]
    h_text = cfg.alpha - pos + scores[k, neg_text]
    h_image = cfg.alpha - pos + scores[neg_image, k]
    L_x = float(np.maximum(h_text, 0).sum() + np.maximum(h_image, 0).sum())

    L_c = 0.0
    grad_unit = {mod: np.zeros_like(unit[mod]) for mod in MODALITIES}
    if clusters and omega_c > 0:
        for mod, (centers, assignment, qhat) in clusters.items():
            diff = column_instances(unit[mod]) - centers[assignment]
            L_c += float(np.einsum("d,ndp,ndp->", qhat, diff, diff))
            if need_grad:
                grad_unit[mod] += omega_c * 2.0 * np.swapaxes(qhat[None, :, None] * diff, 1, 2)
    loss = L_x + omega_c * L_c

    grads = {}
    if need_grad:
        on_t = (h_text > 0).astype(np.float64)
        on_i = (h_image > 0).astype(np.float64)
        ii = np.concatenate([k, k, neg_image])
        jj = np.concatenate([k, neg_text, k])
        g = np.concatenate([-(on_t + on_i), on_t, on_i])
        keep = g != 0
        ii, jj, g = ii[keep], jj[keep], g[keep]
        grad_a = np.zeros_like(a)
        grad_b = np.zeros_like(b)
        if g.size:
            route = _route(s[ii, jj]) * g[:, None, None]
            np.add.at(grad_a, ii, route @ b[jj])
            np.add.at(grad_b, jj, np.swapaxes(route, 1, 2) @ a[ii])
        for mod, grad_w in (("image", grad_a), ("text", grad_b)):
            p = probs.get(mod)
            gu = grad_unit[mod] + (grad_w if p is None else weight_tokens(grad_w, p))
            gx = _normalize_backward(gu, unit[mod], norms[mod], deg[mod], cfg.normalize_tokens)
            x = raw[mod]
            grads[mod] = x.reshape(-1, x.shape[2]).T @ gx.reshape(-1, gx.shape[2])
            if not np.all(np.isfinite(grads[mod])):
                raise NumericalError(f"non-finite gradient for the {mod} head")
    return BatchResult(loss, L_x, L_c, grads, (neg_text, neg_image), scores)


# ---------------------------------------------------------------------------
# state and epoch driver


@dataclass
class TrainState:
    config: TrainConfig
    heads: dict
    banks: dict
    train_index: np.ndarray
    val_index: np.ndarray
    rng: np.random.Generator
    probs: dict = field(default_factory=dict)  # modality -> ProbabilityState
    instance_probs: dict = field(default_factory=dict)  # modality -> (N_train, D), rows follow train_index
    clusters: dict = field(default_factory=dict)  # modality -> FrozenClusters
    velocity: dict = field(default_factory=dict)
    epoch: int = 0
    metrics: list = field(default_factory=list)

    # -- probabilities used by the weighted interaction -------------------
    def weighting_active(self) -> bool:
        return self.config.ablate != "wei" and bool(self.probs)

    def semantic_weights(self, mod: str, unit_tokens: np.ndarray) -> np.ndarray | None:
        """Semantic probabilities for arbitrary embedded instances (None = unweighted)."""
        if not self.weighting_active():
            return None
        state = self.probs[mod]
        if self.config.ablate == "pro":
            return state.pseudo_semantic
        p, _, _, _ = instance_semantic_probabilities(unit_tokens, self.banks[mod].prototypes,
                                                     state.epsilon, state.sign_mode)
        return p

    def embed(self, mod: str, raw: np.ndarray) -> np.ndarray:
        return embed(self.heads[mod].weight, raw, self.config.normalize_tokens)[0]

    def scores(self, corpus: Corpus, weighted: bool = True) -> np.ndarray:
        """Full (N, N) image-by-text score matrix for ``corpus``."""
        a = self.embed("image", corpus.images)
        b = self.embed("text", corpus.texts)
        if weighted:
            a = weight_tokens(a, self.semantic_weights("image", a))
            b = weight_tokens(b, self.semantic_weights("text", b))
        return score_matrix(a, b, workers=self.config.workers)

    def evaluate(self, corpus: Corpus, weighted: bool = True, clip_k: bool = True) -> RetrievalReport:
        return rsum_report(self.scores(corpus, weighted), clip_k=clip_k)


def split_indices(n: int, val_fraction: float, seed: int):
    if n < 3:
        raise ConfigurationError("need at least 3 pairs to split into train and validation")
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_val = min(max(1, int(round(val_fraction * n))), n - 2)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def init_state(cfg: TrainConfig, corpus: Corpus) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    if cfg.head_init == "fold":
        heads = {mod: ProjectionHead.fold(mod, corpus.d_raw, cfg.D) for mod in MODALITIES}
    else:
        heads = {mod: ProjectionHead.random(mod, corpus.d_raw, cfg.D, rng) for mod in MODALITIES}
    banks = {mod: PrototypeBank(mod, cfg.j0, cfg.J) for mod in MODALITIES}
    train_index, val_index = split_indices(corpus.pair_count, cfg.val_fraction, cfg.seed)
    return TrainState(cfg, heads, banks, train_index, val_index, rng)


def _batches(order: np.ndarray, size: int):
    chunks = [order[i:i + size] for i in range(0, order.size, size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def _sgd_step(state: TrainState, grads: dict) -> None:
    cfg = state.config
    for mod, g in grads.items():
        if cfg.momentum > 0:
            v = state.velocity.get(mod)
            v = g if v is None else cfg.momentum * v + g
            state.velocity[mod] = v
            g = v
        state.heads[mod].weight -= cfg.learning_rate * g
        if not np.all(np.isfinite(state.heads[mod].weight)):
            raise NumericalError(f"{mod} head became non-finite")


def _refresh_prototypes(state: TrainState, unit: dict) -> dict:
    """End-of-epoch probability and prototype update; returns log fields."""
    cfg = state.config
    phat = pseudo_semantic_probability((unit["image"], unit["text"]))
    log = {"w_applied": None, "energy": None, "epsilon": None}
    if cfg.ablate == "pro":
        for mod in MODALITIES:
            state.probs[mod] = ProbabilityState(mod, phat, None, cfg.sign_mode, epoch=state.epoch)
        return log
    qhat = 1.0 - phat
    log = {"w_applied": {}, "energy": {}, "epsilon": {}}
    for mod in MODALITIES:
        cols = column_instances(unit[mod])  # (N, D, P)
        flat = cols.reshape(-1, cols.shape[2])
        w = np.tile(qhat, cols.shape[0])
        pick = subsample(flat.shape[0], cfg.cluster_cap, state.rng)
        if not np.any(w[pick] > 0):
            # every column looked fully semantic; fall back to uniform weights
            w = np.ones_like(w)
        bank = epoch_update(state.banks[mod], flat[pick], w[pick], cfg.K, state.rng,
                            iterative=cfg.ablate != "ite", feedback=cfg.ablate != "fed",
                            max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol)
        state.banks[mod] = bank
        eps = None if cfg.epsilon_mode == "median" else cfg.epsilon
        p, _, _, eps = instance_semantic_probabilities(unit[mod], bank.prototypes, eps, cfg.sign_mode)
        state.probs[mod] = ProbabilityState(mod, phat, eps, cfg.sign_mode, epoch=state.epoch)
        state.instance_probs[mod] = p
        centers = bank.last_cluster.centers
        _, assignment = nearest_prototype(cols, centers)
        state.clusters[mod] = FrozenClusters(centers, assignment, qhat)
        log["w_applied"][mod] = bank.weight_history[-1]
        log["energy"][mod] = bank.last_cluster.energy
        log["epsilon"][mod] = eps
    return log


def train_epoch(state: TrainState, corpus: Corpus) -> TrainState:
    """One pass over the training split followed by the end-of-epoch updates."""
    cfg = state.config
    state.epoch += 1
    epoch = state.epoch
    omega = cfg.omega_c if (state.clusters and epoch >= cfg.j0 and cfg.ablate not in ("wei", "pro")) else 0.0
    pos_of = np.full(corpus.pair_count, -1)
    pos_of[state.train_index] = np.arange(state.train_index.size)
    sums = {"L_x": 0.0, "L_c": 0.0}
    order = state.rng.permutation(state.train_index)
    for batch in _batches(order, cfg.batch_size):
        rows = pos_of[batch]
        probs = {}
        if state.weighting_active():
            for mod in MODALITIES:
                probs[mod] = (state.probs[mod].pseudo_semantic if cfg.ablate == "pro"
                              else state.instance_probs[mod][rows])
        clusters = None
        if omega > 0:
            clusters = {mod: (fc.centers, fc.assignment[rows], fc.qhat) for mod, fc in state.clusters.items()}
        res = forward_backward({m: state.heads[m].weight for m in MODALITIES},
                               corpus.images[batch], corpus.texts[batch], cfg,
                               probs=probs, clusters=clusters, omega_c=omega, rng=state.rng)
        _sgd_step(state, res.grads)
        sums["L_x"] += res.L_x
        sums["L_c"] += res.L_c

    log = {"w_applied": None, "energy": None, "epsilon": None}
    if epoch >= cfg.j0 and cfg.ablate != "wei":
        train = corpus.subset(state.train_index)
        unit = {"image": state.embed("image", train.images), "text": state.embed("text", train.texts)}
        log = _refresh_prototypes(state, unit)

    report = state.evaluate(corpus.subset(state.val_index))
    if epoch >= cfg.j0 and cfg.ablate != "wei":
        for bank in state.banks.values():
            bank.record_rsum(report.rsum)
    entry = {
        "epoch": epoch,
        "L_x": sums["L_x"],
        "L_c": sums["L_c"],
        "w_applied": log["w_applied"],
        "energy": log["energy"],
        "epsilon": log["epsilon"],
        "rsum": report.rsum,
        "recalls": report.r_at,
    }
    state.metrics.append(entry)
    logger.info("epoch %d  L_x=%.4f  L_c=%.4f  rsum=%.2f", epoch, entry["L_x"], entry["L_c"], entry["rsum"])
    return state


def snapshot(state: TrainState) -> TrainState:
    """Deep copy of the parts of the state needed to score new data."""
    return dataclasses.replace(
        state,
        heads={m: ProjectionHead(m, h.weight.copy()) for m, h in state.heads.items()},
        banks={m: dataclasses.replace(b, rsum_history=list(b.rsum_history), weight_history=list(b.weight_history),
                                      pseudo_history=list(b.pseudo_history), last_cluster=None)
               for m, b in state.banks.items()},
        probs=dict(state.probs),
        instance_probs=dict(state.instance_probs),
        clusters=dict(state.clusters),
        velocity={},
        metrics=list(state.metrics),
    )


@dataclass
class FitResult:
    best: TrainState
    final: TrainState
    metrics: list

    @property
    def final_rsum(self) -> float:
        return self.metrics[-1]["rsum"]

    @property
    def best_rsum(self) -> float:
        return max(m["rsum"] for m in self.metrics)


def fit(cfg: TrainConfig, corpus: Corpus, out_dir=None) -> FitResult:
    """Train for epochs 1..J; keeps the best-validation snapshot.

    With ``out_dir`` the config, the per-epoch metrics log and checkpoints
    (``out_dir`` = best, ``out_dir/latest`` = last epoch) are written.
    """
    from . import checkpoint

    cfg.validate()
    state = init_state(cfg, corpus)
    best, best_rsum = None, -np.inf
    if out_dir is not None:
        checkpoint.start_run(out_dir, cfg)
    for _ in range(cfg.J):
        train_epoch(state, corpus)
        entry = state.metrics[-1]
        if entry["rsum"] > best_rsum:
            best, best_rsum = snapshot(state), entry["rsum"]
        if out_dir is not None:
            checkpoint.append_metrics(out_dir, entry)
            checkpoint.save_checkpoint(checkpoint.latest_dir(out_dir), state)
            if best.epoch == state.epoch:
                checkpoint.save_checkpoint(out_dir, best)
    return FitResult(best, state, list(state.metrics))


def metrics_jsonl(metrics: list) -> str:
    return "".join(json.dumps(m, sort_keys=True) + "\n" for m in metrics)
