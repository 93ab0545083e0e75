import json
import os

import numpy as np
import pytest

from protogmm.checkpoint import load_checkpoint
from protogmm.cli import run_command

SPEC_TEXT = """
n_classes = 3
input_dim = 2
modes_per_class = 2
n_samples = 300
seed = 7
rotation_deg = 30.0
translation = 1.5, 0.0
scale = 1.0
label_shift = 0.2, 0.3, 0.5
"""

CONFIG_TEXT = """
n_iter = 12
iter_dist = 3
batch_source = 8
batch_target = 8
encoder_hidden = 16,16
proj_hidden = 16
proj_dim = 4
n_components = 2
source_memory_capacity = 64
target_bank_capacity = 32
target_bank_top_k = 4
gmm_momentum = 0.9
warmup_iters = 4
seed = 3
"""


@pytest.fixture()
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "spec.txt").write_text(SPEC_TEXT)
    (tmp_path / "config.txt").write_text(CONFIG_TEXT)
    code = run_command(
        [
            "gen",
            "--spec", "spec.txt",
            "--out-source", "source.pgmm",
            "--out-target", "target.pgmm",
            "--out-target-labels", "target_labels.pgmm",
        ]
    )
    assert code == 0
    return tmp_path


def run_train(out="run", config="config.txt"):
    return run_command(
        ["train", "--source", "source.pgmm", "--target", "target.pgmm", "--config", config, "--out", out]
    )


def test_gen_train_eval_round_trip_is_deterministic(workspace, capsys):
    assert run_train("run1") == 0
    assert run_train("run2") == 0
    d1 = (workspace / "run1" / "diagnostics.csv").read_bytes()
    d2 = (workspace / "run2" / "diagnostics.csv").read_bytes()
    assert d1 == d2

    for i, run in enumerate(("run1", "run2")):
        code = run_command(
            [
                "eval",
                "--checkpoint", run,
                "--data", "target.pgmm",
                "--labels", "target_labels.pgmm",
                "--out", f"metrics{i}.csv",
            ]
        )
        assert code == 0
    assert (workspace / "metrics0.csv").read_bytes() == (workspace / "metrics1.csv").read_bytes()
    out = capsys.readouterr().out
    assert "mIoU" in out


def test_manifest_inventory_complete(workspace):
    assert run_train("run") == 0
    manifest = json.loads((workspace / "run" / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["seed"] == 3
    listed = set(manifest["outputs"])
    actual = set(os.listdir(workspace / "run"))
    assert listed == actual  # everything listed exists, nothing unlisted written
    assert "config" in manifest and manifest["config"]["n_iter"] == 12


def test_eval_mismatched_lengths_exit_2(workspace, capsys):
    assert run_train("run") == 0
    # labels file with the wrong row count
    (workspace / "short_labels.pgmm").write_text("pgmm-dataset v1 dim=0 classes=3 count=1\n0\n")
    code = run_command(
        ["eval", "--checkpoint", "run", "--data", "target.pgmm", "--labels", "short_labels.pgmm"]
    )
    assert code == 2
    assert "rows" in capsys.readouterr().err


def test_inspect_priors_fresh_checkpoint(workspace, capsys):
    (workspace / "fresh.txt").write_text(CONFIG_TEXT.replace("n_iter = 12", "n_iter = 0").replace("iter_dist = 3", "iter_dist = 0"))
    assert run_train("fresh", config="fresh.txt") == 0
    capsys.readouterr()
    assert run_command(["inspect", "--checkpoint", "fresh", "--what", "priors"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 2
    third = repr(1.0 / 3.0)
    assert out[0] == "source," + ",".join([third] * 3)
    assert out[1] == "target," + ",".join([third] * 3)


def test_inspect_gmm_and_prototypes(workspace, capsys):
    assert run_train("run") == 0
    capsys.readouterr()
    assert run_command(["inspect", "--checkpoint", "run", "--what", "gmm"]) == 0
    gmm_rows = capsys.readouterr().out.strip().splitlines()
    assert len(gmm_rows) == 3 * 2  # C classes x M components
    assert run_command(["inspect", "--checkpoint", "run", "--what", "prototypes"]) == 0
    proto_rows = capsys.readouterr().out.strip().splitlines()
    assert len(proto_rows) == 3


def test_unknown_flag_exit_1(workspace, capsys):
    code = run_command(["eval", "--checkpoint", "x", "--data", "y", "--labels", "z", "--bogus"])
    assert code == 1
    assert "--bogus" in capsys.readouterr().err


def test_unknown_config_key_exit_2(workspace, capsys):
    (workspace / "bad.txt").write_text("n_iter = 5\nmystery_knob = 1\n")
    code = run_train("run_bad", config="bad.txt")
    assert code == 2
    assert "mystery_knob" in capsys.readouterr().err


def test_missing_file_exit_2(workspace):
    code = run_command(
        ["train", "--source", "nope.pgmm", "--target", "target.pgmm", "--config", "config.txt", "--out", "r"]
    )
    assert code == 2


def test_pgmm_seed_env_overrides_config(workspace, monkeypatch):
    monkeypatch.setenv("PGMM_SEED", "99")
    assert run_train("run_env") == 0
    manifest = json.loads((workspace / "run_env" / "manifest.json").read_text())
    assert manifest["seed"] == 99
    assert manifest["config"]["seed"] == 99


def test_export_viz_writes_svg(workspace):
    assert run_train("run") == 0
    code = run_command(
        ["export-viz", "--checkpoint", "run", "--data", "target.pgmm", "--out", "viz.svg"]
    )
    assert code == 0
    svg = (workspace / "viz.svg").read_text()
    assert svg.startswith("<svg")
    assert "<circle" in svg and "<rect" in svg and "<polygon" in svg


def test_checkpoint_round_trip_preserves_state(workspace):
    assert run_train("run") == 0
    state = load_checkpoint(str(workspace / "run"))
    assert state.iteration == 12
    assert state.bank.initialized()
    assert state.opt.step == 12
    # student params finite and loaded
    for v in state.student.params.values():
        assert np.all(np.isfinite(v))


def test_gen_invalid_spec_exit_3(workspace, capsys):
    (workspace / "bad_spec.txt").write_text(SPEC_TEXT.replace("label_shift = 0.2, 0.3, 0.5", "label_shift = 0.9, 0.3, 0.5"))
    code = run_command(
        [
            "gen",
            "--spec", "bad_spec.txt",
            "--out-source", "s.pgmm",
            "--out-target", "t.pgmm",
            "--out-target-labels", "tl.pgmm",
        ]
    )
    assert code == 3
    assert "label_shift" in capsys.readouterr().err


def test_help_documents_config_defaults(workspace, capsys):
    assert run_command(["--help"]) == 0
    capsys.readouterr()
    assert run_command(["train", "--help"]) == 0
    out = capsys.readouterr().out
    for key in ("n_iter", "tau", "beta_conf", "lambda_contrast", "gmm_momentum", "rcs_temperature"):
        assert key in out
