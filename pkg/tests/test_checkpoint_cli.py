import json

import numpy as np
import pytest

from pico import cli
from pico.checkpoint import load_checkpoint, load_tensors, read_metrics, save_tensors
from pico.errors import CorpusFormatError

SMALL = {"pair_count": 60, "D_raw": 16, "D": 8, "n_v": 4, "n_t": 4, "semantic_column_count": 6,
         "style_amplitude": 1.0, "concept_count": 2, "K": 3, "j0": 1, "J": 3, "batch_size": 16,
         "learning_rate": 0.05, "seed": 3}


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert cli.run(["gen", "--config", str(cfg), "--out", str(tmp_path / "corpus")]) == 0
    assert cli.run(["train", "--config", str(cfg), "--corpus", str(tmp_path / "corpus"),
                    "--out", str(tmp_path / "run")]) == 0
    return tmp_path


def test_tensor_roundtrip(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    save_tensors(tmp_path, {"a": a, "b": np.ones(4)})
    out = load_tensors(tmp_path)
    assert out["a"].tobytes() == a.tobytes() and out["b"].shape == (4,)
    (tmp_path / "tensors.bin").write_bytes(b"\0" * 8)
    with pytest.raises(CorpusFormatError):
        load_tensors(tmp_path)


def test_pipeline(workspace, capsys):
    run = workspace / "run"
    metrics = read_metrics(run)
    assert [m["epoch"] for m in metrics] == [1, 2, 3]
    assert (run / "latest" / "tensors.bin").exists()
    report = workspace / "report.json"
    assert cli.run(["eval", "--checkpoint", str(run / "latest"), "--corpus", str(workspace / "corpus"),
                    "--report", str(report), "--split", "val"]) == 0
    data = json.loads(report.read_text())
    assert len(data["r_at"]) == 6 and data["rsum"] == sum(data["r_at"].values())
    assert data["rsum"] == metrics[-1]["rsum"]
    capsys.readouterr()
    assert cli.run(["inspect", "--checkpoint", str(run)]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["prototypes"]["image"]["m"] >= 1 and "pseudo_semantic" in shown["probabilities"]["text"]
    out = workspace / "dist.csv"
    assert cli.run(["export-dist", "--checkpoint", str(run), "--corpus", str(workspace / "corpus"),
                    "--out", str(out), "--mismatches", "10"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 2 * (60 + 10)


def test_checkpoint_scores_match_float32_heads(workspace):
    state = load_checkpoint(workspace / "run" / "latest")
    assert state.epoch == 3
    for head in state.heads.values():
        assert np.array_equal(head.weight, head.weight.astype(np.float32).astype(np.float64))


def test_oracle_eval_on_noiseless_corpus(tmp_path):
    assert cli.run(["gen", "--out", str(tmp_path / "c"), "--pair-count", "40", "--noise-sigma", "0",
                    "--style-amplitude", "0"]) == 0
    assert cli.run(["eval", "--oracle", "--corpus", str(tmp_path / "c"), "--report", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["rsum"] == 600.0


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pair_count": 30, "seed": 1}))
    assert cli.run(["gen", "--config", str(cfg), "--pair-count", "12", "--out", str(tmp_path / "c")]) == 0
    assert json.loads((tmp_path / "c" / "manifest.json").read_text())["pair_count"] == 12


@pytest.mark.parametrize("argv", [["train", "--bogus"], ["nope"], [], ["train", "--J", "x"],
                                  ["eval", "--corpus", "c", "--report", "r.json"],
                                  ["gen"]])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.run(argv) == 2


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pair_count": 10, "learning_rat": 0.1}))
    assert cli.run(["gen", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 2


def test_runtime_failures_exit_1(tmp_path):
    assert cli.run(["train", "--corpus", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 1
    assert cli.run(["gen", "--out", str(tmp_path / "c"), "--pair-count", "10"]) == 0
    assert cli.run(["train", "--corpus", str(tmp_path / "c"), "--out", str(tmp_path / "r"), "--j0", "4",
                    "--J", "4"]) == 1


def test_help_lists_every_key(capsys):
    for command, fields in (("train", cli.TRAIN_FIELDS), ("gen", cli.SYNTH_FIELDS)):
        assert cli.run([command, "--help"]) == 0
        text = capsys.readouterr().out
        for key in fields:
            assert f"--{key.replace('_', '-')}" in text
