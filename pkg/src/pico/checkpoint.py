"""Checkpoint directories: JSON metadata plus a float32 tensor payload.

Layout of a checkpoint directory::

    config.json      training configuration
    state.json       epoch, probabilities, bank counters and histories
    manifest.json    {version, dtype: "f32le", tensors: [{name, shape, offset}]}
    tensors.bin      concatenated little-endian float32 tensors

A run directory is itself the best-validation checkpoint and additionally
holds ``metrics.jsonl`` and a ``latest/`` checkpoint.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .embeddings import ProjectionHead
from .errors import CorpusFormatError
from .probability import ProbabilityState
from .prototypes import PrototypeBank
from .training import MODALITIES, TrainConfig, TrainState

VERSION = 1


def latest_dir(run_dir) -> Path:
    return Path(run_dir) / "latest"


def start_run(run_dir, cfg: TrainConfig) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    (run_dir / "metrics.jsonl").write_text("")


def append_metrics(run_dir, entry: dict) -> None:
    with open(Path(run_dir) / "metrics.jsonl", "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def read_metrics(run_dir) -> list[dict]:
    path = Path(run_dir) / "metrics.jsonl"
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def save_tensors(directory, tensors: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / "tensors.bin", "wb") as fh:
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(data.tobytes())
            entries.append({"name": name, "shape": list(data.shape), "offset": offset})
            offset += data.nbytes
    manifest = {"version": VERSION, "dtype": "f32le", "tensors": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_tensors(directory) -> dict:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        payload = (directory / "tensors.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"cannot read checkpoint tensors in {directory}: {exc}") from exc
    if manifest.get("dtype") != "f32le" or not isinstance(manifest.get("tensors"), list):
        raise CorpusFormatError("checkpoint manifest is malformed")
    out = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        lo = entry["offset"]
        if lo < 0 or lo + 4 * count > len(payload):
            raise CorpusFormatError(f"tensor {entry['name']!r} overruns the payload")
        out[entry["name"]] = np.frombuffer(payload, dtype="<f4", count=count, offset=lo).reshape(shape).copy()
    return out


def save_checkpoint(directory, state: TrainState) -> Path:
    directory = Path(directory)
    tensors = {f"head.{m}": state.heads[m].weight for m in MODALITIES}
    for m, bank in state.banks.items():
        if bank.prototypes is not None:
            tensors[f"prototypes.{m}"] = bank.prototypes
    save_tensors(directory, tensors)
    meta = {
        "version": VERSION,
        "epoch": state.epoch,
        "train_index": state.train_index.tolist(),
        "val_index": state.val_index.tolist(),
        "probs": {m: p.to_dict() for m, p in state.probs.items()},
        "banks": {m: {k: v for k, v in b.summary().items() if k != "prototypes"} for m, b in state.banks.items()},
        "rsum": state.metrics[-1]["rsum"] if state.metrics else None,
    }
    (directory / "state.json").write_text(json.dumps(meta, indent=2))
    (directory / "config.json").write_text(json.dumps(state.config.to_dict(), indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory) -> TrainState:
    """Rebuild a scoring-capable TrainState (float32-rounded heads and prototypes)."""
    directory = Path(directory)
    try:
        cfg = TrainConfig(**json.loads((directory / "config.json").read_text()))
        meta = json.loads((directory / "state.json").read_text())
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise CorpusFormatError(f"cannot read checkpoint in {directory}: {exc}") from exc
    tensors = load_tensors(directory)
    heads = {m: ProjectionHead(m, tensors[f"head.{m}"].astype(np.float64)) for m in MODALITIES}
    banks = {}
    for m in MODALITIES:
        info = meta["banks"][m]
        protos = tensors.get(f"prototypes.{m}")
        banks[m] = PrototypeBank(m, info["j0"], info["J"],
                                 None if protos is None else protos.astype(np.float64), info["m"],
                                 list(info["rsum_history"]), list(info["weight_history"]))
    probs = {m: ProbabilityState(m, np.asarray(p["pseudo_semantic"]), p["epsilon"], p["sign_mode"], epoch=p["epoch"])
             for m, p in meta["probs"].items()}
    return TrainState(cfg, heads, banks, np.asarray(meta["train_index"], dtype=np.int64),
                      np.asarray(meta["val_index"], dtype=np.int64), np.random.default_rng(cfg.seed),
                      probs=probs, epoch=meta["epoch"])
