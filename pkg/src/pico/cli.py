"""Command-line entry point: ``pico gen|train|eval|inspect|export-dist``.

Every subcommand reads an optional flat JSON config (``--config``). Keys are
the union of the training and synthetic-data settings plus the path keys
below; flags override file values and unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .embeddings import load_embeddings
from .errors import PicoError
from .evaluation import export_score_distribution, rsum_report
from .synthdata import SynthConfig, generate_corpus, load_ground_truth, oracle_scores, write_corpus
from .training import ABLATIONS, TrainConfig, fit

PATH_KEYS = {
    "corpus": "corpus directory",
    "out": "output directory (gen, train) or CSV file (export-dist)",
    "checkpoint": "checkpoint directory",
    "report": "report JSON path",
}
TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
SYNTH_FIELDS = {f.name: f for f in dataclasses.fields(SynthConfig)}


class UsageError(Exception):
    """Bad invocation; reported with exit status 2."""


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _optional_ablation(text: str):
    if text.lower() in ("none", "full", ""):
        return None
    if text not in ABLATIONS:
        raise argparse.ArgumentTypeError(f"ablate must be one of {', '.join(ABLATIONS)} or none")
    return text


def _flag_type(field: dataclasses.Field):
    if field.name == "ablate":
        return _optional_ablation
    kind = type(field.default)
    return {bool: _parse_bool, int: int, float: float}.get(kind, str)


def _add_keys(parser: argparse.ArgumentParser, fields: dict, title: str) -> None:
    group = parser.add_argument_group(title)
    for name, f in fields.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=_flag_type(f),
                           default=argparse.SUPPRESS, metavar=name.upper(),
                           help=f"default: {f.default!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pico", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress (repeat for debug)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def command(name, help_text, paths, train=False, synth=False):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="flat JSON config file")
        for key in paths:
            p.add_argument(f"--{key}", dest=key, type=Path, default=argparse.SUPPRESS, help=PATH_KEYS[key])
        if train:
            _add_keys(p, TRAIN_FIELDS, "training keys")
        if synth:
            _add_keys(p, SYNTH_FIELDS, "synthetic data keys")
        return p

    command("gen", "generate a synthetic corpus with ground truth", ["out"], synth=True)
    command("train", "train projection heads and prototypes on a corpus", ["corpus", "out"], train=True)
    ev = command("eval", "write a retrieval report for a checkpoint", ["checkpoint", "corpus", "report"])
    ev.add_argument("--split", choices=("all", "val", "train"), default="all",
                    help="which pairs of the corpus to score (val/train follow the checkpoint's split)")
    ev.add_argument("--oracle", action="store_true",
                    help="score with the planted semantic columns instead of a checkpoint")
    ev.add_argument("--unweighted", action="store_true", help="disable probability weighting")
    ev.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="scoring threads")
    command("inspect", "print prototypes, probabilities and histories as JSON", ["checkpoint"])
    ex = command("export-dist", "write matched/mismatched score distributions as CSV",
                 ["checkpoint", "corpus", "out"])
    ex.add_argument("--mismatches", type=int, default=None, help="mismatched pairs to sample (default: pair count)")
    ex.add_argument("--seed", type=int, default=0, help="mismatch sampling seed")
    return parser


def load_config(path) -> dict:
    """Read a flat JSON config, rejecting unknown keys."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    known = set(TRAIN_FIELDS) | set(SYNTH_FIELDS) | set(PATH_KEYS)
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


def _settings(args: argparse.Namespace) -> dict:
    merged = load_config(args.config) if args.config else {}
    merged.update({k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")})
    return merged


def _require(settings: dict, *keys) -> list:
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join(f"--{k}" for k in missing))
    return [Path(settings[k]) for k in keys]


def _subset(settings: dict, fields: dict) -> dict:
    return {k: v for k, v in settings.items() if k in fields}


def _cmd_gen(s: dict) -> dict:
    (out,) = _require(s, "out")
    cfg = SynthConfig(**_subset(s, SYNTH_FIELDS))
    corpus, truth = generate_corpus(cfg)
    write_corpus(out, corpus, truth)
    return {"out": str(out), "pair_count": corpus.pair_count, "semantic_columns": truth.semantic_columns.tolist()}


def _cmd_train(s: dict) -> dict:
    corpus_dir, out = _require(s, "corpus", "out")
    cfg = TrainConfig(**_subset(s, TRAIN_FIELDS))
    result = fit(cfg, load_embeddings(corpus_dir), out_dir=out)
    return {"out": str(out), "epochs": len(result.metrics), "final_rsum": result.final_rsum,
            "best_rsum": result.best_rsum, "best_epoch": result.best.epoch}


def _split(corpus, state, which: str):
    if which == "all":
        return corpus
    if state is None:
        raise UsageError("--split val/train needs --checkpoint")
    return corpus.subset(state.val_index if which == "val" else state.train_index)


def _cmd_eval(s: dict) -> dict:
    corpus_dir, report_path = _require(s, "corpus", "report")
    if not s.get("checkpoint") and not s["oracle"]:
        raise UsageError("eval needs --checkpoint or --oracle")
    corpus = load_embeddings(corpus_dir)
    state = checkpoint.load_checkpoint(s["checkpoint"]) if s.get("checkpoint") else None
    if state is not None and "workers" in s:
        state.config.workers = s["workers"]
    part = _split(corpus, state, s["split"])
    if s["oracle"]:
        truth = load_ground_truth(corpus_dir)
        scores = oracle_scores(part, truth, workers=s.get("workers", 1))
    else:
        scores = state.scores(part, weighted=not s["unweighted"])
    # same K clipping as the per-epoch validation metrics, so small splits work
    report = rsum_report(scores, clip_k=True).to_dict()
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def _cmd_inspect(s: dict) -> dict:
    (ckpt,) = _require(s, "checkpoint")
    state = checkpoint.load_checkpoint(ckpt)
    return {
        "epoch": state.epoch,
        "config": state.config.to_dict(),
        "probabilities": {m: p.to_dict() for m, p in state.probs.items()},
        "prototypes": {m: b.summary() for m, b in state.banks.items()},
        "metrics": checkpoint.read_metrics(ckpt),
    }


def _cmd_export(s: dict) -> dict:
    ckpt, corpus_dir, out = _require(s, "checkpoint", "corpus", "out")
    state = checkpoint.load_checkpoint(ckpt)
    corpus = load_embeddings(corpus_dir)
    path = export_score_distribution(state, corpus, out, mismatch_count=s["mismatches"], seed=s["seed"])
    return {"out": str(path), "pair_count": corpus.pair_count}


COMMANDS = {"gen": _cmd_gen, "train": _cmd_train, "eval": _cmd_eval, "inspect": _cmd_inspect,
            "export-dist": _cmd_export}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = COMMANDS[args.command](_settings(args))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pico {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (PicoError, OSError, ValueError) as exc:
        print(f"pico {args.command}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True, default=_json_default))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
