"""Command-line surface: gen / train / eval / inspect / export-viz.

Exit codes: 0 success, 1 usage error, 2 IO or parse error, 3 contract or
not-ready error. The environment variable PGMM_SEED overrides the training
config's seed; the effective seed is recorded in the run manifest.
"""
from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .checkpoint import (
    CHECKPOINT_FILE,
    MANIFEST_FILE,
    load_checkpoint,
    save_checkpoint,
    write_manifest,
)
from .config import config_defaults_help, config_to_dict, parse_domain_spec, parse_train_config
from .data import generate_domain_pair, read_dataset, write_dataset
from .errors import ContractViolation, NotReady, ParseError, UsageError
from .pipeline import evaluate, records_to_csv, train
from .viz import pca_basis, project_2d, scatter_svg

DIAGNOSTICS_FILE = "diagnostics.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would sys.exit(2); we map usage errors to 1
        raise UsageError(message)


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _cmd_gen(args) -> int:
    spec = parse_domain_spec(_read_text(args.spec))
    source, target = generate_domain_pair(spec)
    write_dataset(source, args.out_source)
    write_dataset(target.without_labels(), args.out_target)
    write_dataset(target.labels_only(), args.out_target_labels)
    print(
        f"wrote {len(source)} source and {len(target)} target samples "
        f"({spec.n_classes} classes, dim {spec.input_dim})"
    )
    return 0


def _cmd_train(args) -> int:
    source = read_dataset(args.source)
    target = read_dataset(args.target)
    cfg = parse_train_config(_read_text(args.config))
    env_seed = os.environ.get("PGMM_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ParseError(f"PGMM_SEED must be an integer, got {env_seed!r}") from None

    os.makedirs(args.out, exist_ok=True)
    outputs = [MANIFEST_FILE, CHECKPOINT_FILE, DIAGNOSTICS_FILE]
    manifest = {
        "artifact_version": __version__,
        "command": "train",
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "source": os.path.abspath(args.source),
        "target": os.path.abspath(args.target),
        "started": _utcnow(),
        "status": "running",
        "outputs": outputs,
    }
    write_manifest(args.out, manifest)

    state, records = train(cfg, source, target)
    with open(os.path.join(args.out, DIAGNOSTICS_FILE), "w", encoding="ascii", newline="\n") as fh:
        fh.write(records_to_csv(records))
    save_checkpoint(state, args.out)

    manifest["status"] = "complete"
    manifest["finished"] = _utcnow()
    write_manifest(args.out, manifest)
    print(f"trained {cfg.n_iter} iterations; outputs in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    labels_ds = read_dataset(args.labels)
    if len(data) != len(labels_ds):
        raise ParseError(
            f"data has {len(data)} rows but labels file has {len(labels_ds)}"
        )
    if data.n_classes != state.n_classes:
        raise ContractViolation(
            f"data declares {data.n_classes} classes, checkpoint has {state.n_classes}"
        )
    metrics = evaluate(state, data.inputs, labels_ds.labels, predictor=args.predictor)
    out = args.out or f"metrics_{args.predictor}.csv"
    with open(out, "w", encoding="ascii", newline="\n") as fh:
        fh.write(metrics.to_csv())
    print(metrics.table())
    print(f"metrics written to {out}")
    return 0


def _cmd_inspect(args) -> int:
    state = load_checkpoint(args.checkpoint)
    w = sys.stdout.write
    if args.what == "priors":
        for name, vec in (("source", state.priors.delta_source), ("target", state.priors.delta_target)):
            w(name + "," + ",".join(repr(float(v)) for v in vec) + "\n")
    elif args.what == "prototypes":
        for c in range(state.n_classes):
            row = [str(c), str(int(state.protos.initialized[c]))]
            row += [repr(float(v)) for v in state.protos.means[c]]
            w(",".join(row) + "\n")
    elif args.what == "gmm":
        for c in range(state.n_classes):
            g = state.bank.gmms[c]
            if g is None:
                continue
            for m in range(g.weights.shape[0]):
                row = [str(c), str(m), repr(float(g.weights[m]))]
                row += [repr(float(v)) for v in g.means[m]]
                row += [repr(float(v)) for v in g.vars[m]]
                w(",".join(row) + "\n")
    return 0


def _cmd_export_viz(args) -> int:
    state = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    logits, f, _ = state.student.forward(data.inputs)
    preds = np.argmax(logits, axis=1)

    comp_means = [
        state.bank.gmms[c].means if state.bank.initialized(c) else np.empty((0, state.bank.dim))
        for c in range(state.n_classes)
    ]
    protos = state.protos.means
    mask = state.protos.initialized
    if f.shape[1] > 2:
        center, basis = pca_basis(f)
        f2 = project_2d(f, center, basis)
        comp_means = [project_2d(m, center, basis) if m.size else m.reshape(0, 2) for m in comp_means]
        protos = project_2d(protos, center, basis)
    else:
        f2 = f
    svg = scatter_svg(f2, preds, comp_means, protos, mask)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pgmm",
        description="Multi-prototype GMM domain adaptation on feature vectors.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic shifted domain pair")
    p.add_argument("--spec", required=True, help="domain spec file (key = value lines)")
    p.add_argument("--out-source", required=True)
    p.add_argument("--out-target", required=True)
    p.add_argument("--out-target-labels", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser(
        "train",
        help="run the adaptation loop",
        epilog="config keys and defaults:\n" + config_defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--source", required=True, help="labeled source dataset")
    p.add_argument("--target", required=True, help="unlabeled target dataset")
    p.add_argument("--config", required=True, help="training config file (key = value lines)")
    p.add_argument("--out", required=True, help="output directory (checkpoint, diagnostics, manifest)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled set")
    p.add_argument("--checkpoint", required=True, help="directory written by train")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True, help="held-out labels (dim=0 dataset file)")
    p.add_argument("--predictor", choices=("head", "gmm"), default="head")
    p.add_argument("--out", default=None, help="metrics CSV path (default metrics_<predictor>.csv)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="dump checkpoint state as CSV on stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--what", choices=("gmm", "prototypes", "priors"), required=True)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("export-viz", help="SVG scatter of projected embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output .svg path")
    p.set_defaults(func=_cmd_export_viz)
    return parser


def run_command(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return int(args.func(args) or 0)
    except SystemExit as exc:  # argparse --help/--version
        return int(exc.code) if isinstance(exc.code, int) else 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ContractViolation, NotReady) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
