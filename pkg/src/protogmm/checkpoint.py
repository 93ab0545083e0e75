"""Checkpoint serialization: every array in the training state goes into one
.npz archive; the run manifest (JSON) carries the config needed to rebuild
the state skeleton on load."""
from __future__ import annotations

import json
import os

import numpy as np

from .config import TrainConfig, config_from_dict, config_to_dict
from .errors import ParseError
from .gmm_bank import ClassGmm
from .pipeline import TrainState, init_state

CHECKPOINT_FILE = "checkpoint.npz"
MANIFEST_FILE = "manifest.json"


def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {
        "meta": np.array([state.n_classes, state.student.config.input_dim, state.iteration], dtype=np.int64),
        "opt.step": np.array(state.opt.step, dtype=np.int64),
        "priors.delta_source": state.priors.delta_source,
        "priors.delta_target": state.priors.delta_target,
        "protos.means": state.protos.means,
        "protos.initialized": state.protos.initialized,
        "gmm.initialized": np.array([state.bank.initialized(c) for c in range(state.n_classes)]),
    }
    for k, p in state.student.params.items():
        arrays[f"student.{k}"] = p
        arrays[f"teacher.{k}"] = state.teacher.params[k]
        arrays[f"opt.m.{k}"] = state.opt.m[k]
        arrays[f"opt.v.{k}"] = state.opt.v[k]
    for c in range(state.n_classes):
        g = state.bank.gmms[c]
        if g is not None:
            arrays[f"gmm.{c}.weights"] = g.weights
            arrays[f"gmm.{c}.means"] = g.means
            arrays[f"gmm.{c}.vars"] = g.vars
        arrays[f"tbank.{c}"] = state.target_bank.contents(c)
        arrays[f"srcmem.{c}"] = state.bank.memory.contents(c)
    return arrays


def save_checkpoint(state: TrainState, out_dir: str) -> str:
    path = os.path.join(out_dir, CHECKPOINT_FILE)
    np.savez(path, **state_arrays(state))
    return path


def load_checkpoint(ckpt_dir: str) -> TrainState:
    manifest = read_manifest(ckpt_dir)
    cfg = config_from_dict(manifest["config"])
    with np.load(os.path.join(ckpt_dir, CHECKPOINT_FILE)) as z:
        arrays = {k: z[k] for k in z.files}
    n_classes, input_dim, iteration = (int(v) for v in arrays["meta"])
    state = init_state(cfg, n_classes, input_dim)
    state.iteration = iteration
    state.opt.step = int(arrays["opt.step"])
    for k in state.student.params:
        state.student.params[k] = arrays[f"student.{k}"]
        state.teacher.params[k] = arrays[f"teacher.{k}"]
        state.opt.m[k] = arrays[f"opt.m.{k}"]
        state.opt.v[k] = arrays[f"opt.v.{k}"]
    state.priors.delta_source = arrays["priors.delta_source"]
    state.priors.delta_target = arrays["priors.delta_target"]
    state.protos.means = arrays["protos.means"]
    state.protos.initialized = arrays["protos.initialized"]
    for c in range(n_classes):
        if arrays["gmm.initialized"][c]:
            g = ClassGmm(
                class_id=c,
                weights=arrays[f"gmm.{c}.weights"],
                means=arrays[f"gmm.{c}.means"],
                vars=arrays[f"gmm.{c}.vars"],
            )
            g.check()
            state.bank.gmms[c] = g
        state.target_bank.load(c, arrays[f"tbank.{c}"])
        state.bank.memory.load(c, arrays[f"srcmem.{c}"])
    return state


def write_manifest(out_dir: str, manifest: dict) -> None:
    with open(os.path.join(out_dir, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(ckpt_dir: str) -> dict:
    path = os.path.join(ckpt_dir, MANIFEST_FILE)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed manifest {path}: {exc}") from None
    if "config" not in manifest:
        raise ParseError(f"manifest {path} lacks a config snapshot")
    return manifest


def manifest_config(manifest: dict) -> TrainConfig:
    return config_from_dict(manifest["config"])


__all__ = [
    "CHECKPOINT_FILE",
    "MANIFEST_FILE",
    "save_checkpoint",
    "load_checkpoint",
    "write_manifest",
    "read_manifest",
    "manifest_config",
    "config_to_dict",
]
