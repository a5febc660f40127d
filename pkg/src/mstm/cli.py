"""Command-line entry point: generate, train, rollout, evaluate, report.

Every command writes a ``*.manifest.json`` next to its outputs recording
the command, input hashes, seed and tool version.  Relative output paths
are resolved against ``$MSTM_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import coerce, file_sha256, read_config
from .datagen import GEOMETRY_FIELDS, generate, sample_configs
from .errors import MSTMError, StatsMismatchError
from .fields import NormStats, Sequence, compute_norm_stats, read_container, split_dataset, write_container
from .metrics import BOUNDS, MaterialBounds, evaluate_pairs, read_csv
from .nn.checkpoint import checkpoint_id, load_checkpoint
from .nn.model import ModelConfig
from .training import TrainConfig, TrainingAborted, evaluate_rollouts, stats_from_checkpoint, train

log = logging.getLogger("mstm")

OUTPUT_ROOT_ENV = "MSTM_OUTPUT_ROOT"
SEQUENCE_ID = "sequence_id"

_TYPES = {"int": int, "float": float, "str": str}
GENERATE_SCHEMA = {
    "kind": str,
    "preset": str,
    **{name: _TYPES[t] if isinstance(t, str) else t for name, t in GEOMETRY_FIELDS.items() if name != "kind"},
    **{f"{name}_range": "range" for name in ("porosity", "thickness", "diameter", "angle", "flier_speed")},
}
MODEL_KEYS = ("conv1_out", "conv2_out", "kernel", "lstm_hidden", "lstm_layers")
TRAIN_SCHEMA = {
    "preset": str,
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "window": int,
    "checkpoint_interval": int,
    "patience": int,
    "chunk": int,
    "beta1": float,
    "beta2": float,
    "eps": float,
    **{k: int for k in MODEL_KEYS},
}


def output_path(path):
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args, schema):
    if args.config is None:
        return {}
    return coerce(read_config(args.config), schema, source=str(args.config))


def _sha(path):
    return file_sha256(path) if path is not None else None


def write_manifest(target, args, *, dataset=None, checkpoint=None, outputs=(), wall_time=0.0):
    """Record provenance for ``outputs`` in ``<target>.manifest.json``."""
    manifest = {
        "command": args.command,
        "config_sha256": _sha(args.config),
        "dataset_sha256": dataset,
        "checkpoint_id": checkpoint,
        "seed": args.seed,
        "tool_version": __version__,
        "wall_time": round(wall_time, 3) if args.record_timing else 0.0,
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
    }
    path = Path(str(target) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- generate -----------------------------------------------------------------


def cmd_generate(args):
    tic = time.perf_counter()
    cfg = _load_config(args, GENERATE_SCHEMA)
    kind = args.kind or cfg.pop("kind", "lattice")
    cfg.pop("kind", None)
    preset = args.preset or cfg.pop("preset", "default")
    cfg.pop("preset", None)
    ranges = {k[: -len("_range")]: v for k, v in cfg.items() if k.endswith("_range")}
    pinned = {k: v for k, v in cfg.items() if not k.endswith("_range")}
    configs = sample_configs(args.n, args.seed, kind, preset, ranges, pinned)
    sequences = generate(configs, workers=args.threads)
    tagged = [
        Sequence(s.frames, {**s.params, SEQUENCE_ID: float(i)}, s.frame_interval) for i, s in enumerate(sequences)
    ]
    out = output_path(args.out)
    write_container(out, tagged)
    read_container(out)  # validate what was written
    write_manifest(out, args, outputs=[out], wall_time=time.perf_counter() - tic)
    print(f"wrote {len(tagged)} sequences to {out}")


# -- train ----------------------------------------------------------------------


def cmd_train(args):
    tic = time.perf_counter()
    cfg = _load_config(args, TRAIN_SCHEMA)
    preset = args.preset or cfg.pop("preset", "desk")
    cfg.pop("preset", None)
    model_kw = {k: cfg.pop(k) for k in MODEL_KEYS if k in cfg}
    if args.epochs is not None:
        cfg["epochs"] = args.epochs
    train_cfg = TrainConfig.preset(preset, seed=args.seed, **cfg)
    sequences = read_container(args.data)
    if len(sequences) < 3:
        raise MSTMError(f"{args.data}: need at least 3 sequences to split, found {len(sequences)}")
    _, n_fields, height, width = sequences[0].frames.shape
    model_cfg = ModelConfig(fields=n_fields, height=height, width=width, window=train_cfg.window, **model_kw)
    split = split_dataset(len(sequences), args.seed)

    out = output_path(args.out)
    resume = load_checkpoint(args.resume) if args.resume else None
    try:
        params, report, stats = train(
            sequences, split, train_cfg, model_cfg,
            checkpoint_path=out, resume=resume, record_timing=args.record_timing,
        )
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}; last good checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        return 1
    stats_path = Path(str(out) + ".norm")
    stats.save(stats_path)
    csv_path = Path(str(out) + ".train.csv")
    report.to_csv(csv_path)
    write_manifest(
        out, args, dataset=file_sha256(args.data), checkpoint=report.checkpoint_id,
        outputs=[out, stats_path, csv_path], wall_time=time.perf_counter() - tic,
    )
    print(f"trained {len(report)} epochs; final train {report.train_loss[-1]:.6g} val {report.val_loss[-1]:.6g}")
    print(f"checkpoint {report.checkpoint_id} -> {out}")
    return 0


# -- rollout --------------------------------------------------------------------


def cmd_rollout(args):
    tic = time.perf_counter()
    ckpt_bytes = Path(args.checkpoint).read_bytes()
    ckpt = load_checkpoint(args.checkpoint)
    stats = stats_from_checkpoint(ckpt)
    sidecar = Path(args.stats) if args.stats else Path(str(args.checkpoint) + ".norm")
    if sidecar.exists() and NormStats.load(sidecar).sha256() != ckpt.stats_sha256:
        raise StatsMismatchError(f"{sidecar} does not match the checkpoint's normalization stats")
    sequences = read_container(args.data)
    split = split_dataset(len(sequences), int(ckpt.meta["split_seed"]))
    data_stats = compute_norm_stats([sequences[i] for i in split.train])
    if data_stats.sha256() != ckpt.stats_sha256:
        raise StatsMismatchError(f"{args.data}: training-split stats differ from those in the checkpoint")
    test = [sequences[i] for i in split.test]
    pairs = evaluate_rollouts(ckpt.params, ckpt.model, stats, test)

    out = output_path(Path(args.out) / "pred.mstm")
    truth_path = out.with_name("truth.mstm")
    stats_path = out.with_name("stats.norm")
    write_container(out, [p for _, p in pairs])
    write_container(truth_path, [t for t, _ in pairs])
    stats.save(stats_path)
    write_manifest(
        out.parent / "rollout", args, dataset=file_sha256(args.data), checkpoint=checkpoint_id(ckpt_bytes),
        outputs=[out, truth_path, stats_path], wall_time=time.perf_counter() - tic,
    )
    print(f"rolled out {len(pairs)} test sequences -> {out.parent}")


# -- evaluate -------------------------------------------------------------------


def _sequence_ids(sequences):
    return [int(s.params.get(SEQUENCE_ID, i)) for i, s in enumerate(sequences)]


def cmd_evaluate(args):
    tic = time.perf_counter()
    pred = read_container(args.pred)
    truth = read_container(args.truth)
    pred_ids = _sequence_ids(pred)
    truth_ids = _sequence_ids(truth)
    if pred_ids != truth_ids:
        bad = sorted(set(pred_ids) ^ set(truth_ids)) or [
            a for a, b in zip(pred_ids, truth_ids) if a != b
        ]
        raise MSTMError(f"prediction and truth sequences are misaligned; offending ids: {bad}")
    if args.stats:
        stats = NormStats.load(args.stats)
    else:
        sidecar = Path(args.pred).with_name("stats.norm")
        stats = NormStats.load(sidecar) if sidecar.exists() else compute_norm_stats(truth)
    bounds = BOUNDS[args.bounds] if args.bounds in BOUNDS else MaterialBounds(*map(float, args.bounds.split(",")))
    report = evaluate_pairs(list(zip(truth, pred)), stats, bounds, start=args.start)
    out_dir = output_path(Path(args.out) / "summary.json").parent
    report.write(out_dir)
    outputs = [out_dir / n for n in ("field_metrics.csv", "frame_metrics.csv", "qoi_metrics.csv",
                                      "curves.csv", "qoi_curves.csv", "summary.json")]
    write_manifest(
        out_dir / "evaluate", args, dataset=file_sha256(args.truth), outputs=outputs,
        wall_time=time.perf_counter() - tic,
    )
    s = report.summary()
    print(
        "MSE {:.4g} +- {:.2g} | SSIM {:.4g} +- {:.2g} | soft IoU {:.4g} +- {:.2g} | CM {:.3g} +- {:.2g}".format(
            *s["fields"]["mse"], *s["fields"]["ssim"], *s["frames"]["soft_iou"], *s["frames"]["cm"]
        )
    )


# -- report ---------------------------------------------------------------------


def _copy(src, dst):
    if Path(src).resolve() != Path(dst).resolve():
        shutil.copyfile(src, dst)


def cmd_report(args):
    tic = time.perf_counter()
    from .plotting import render_metric, render_qoi

    metrics_dir = Path(args.metrics)
    curves_path = metrics_dir / "curves.csv"
    if not curves_path.exists():
        raise MSTMError(f"{curves_path} not found; run 'evaluate' first")
    out_dir = output_path(Path(args.out) / "curves.csv").parent
    curves = read_csv(curves_path)
    if not curves:
        raise MSTMError(f"{curves_path} has no rows")
    outputs = []
    x = np.array([r["t"] for r in curves])
    metrics = [k for k in curves[0] if k != "t" and not k.endswith("_std")]
    for m in metrics:
        path = out_dir / f"{m}.png"
        render_metric(path, x, [r[m] for r in curves], [r[m + "_std"] for r in curves], m)
        outputs.append(path)
    _copy(curves_path, out_dir / "curves.csv")
    outputs.append(out_dir / "curves.csv")

    qoi_path = metrics_dir / "qoi_curves.csv"
    if qoi_path.exists():
        qoi = read_csv(qoi_path)
        for name in dict.fromkeys(r["field"] for r in qoi):
            rows = [r for r in qoi if r["field"] == name]
            series = {k: np.array([np.nan if r[k] is None else r[k] for r in rows]) for k in rows[0] if k != "field"}
            path = out_dir / f"qoi_{name}.png"
            render_qoi(path, name, series["t"], series)
            outputs.append(path)
        _copy(qoi_path, out_dir / "qoi_curves.csv")
        outputs.append(out_dir / "qoi_curves.csv")
    write_manifest(out_dir / "report", args, outputs=outputs, wall_time=time.perf_counter() - tic)
    print(f"wrote {len(outputs)} files to {out_dir}")


# -- entry point ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="mstm", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--config", type=Path, help="key = value config file for the command")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for generate (default 1)")
    parser.add_argument("--record-timing", action="store_true", help="store wall times (breaks byte-identity)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate sequences into a container")
    p.add_argument("--out", required=True)
    p.add_argument("-n", "--n", type=int, required=True, help="number of sequences")
    p.add_argument("--kind", choices=("lattice", "porous"))
    p.add_argument("--preset", choices=("default", "toy"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on a container")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="roll out the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stats", help="normalization sidecar (default <checkpoint>.norm)")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("evaluate", help="score predictions against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--bounds", default="lattice", help="'lattice', 'porous' or 'lb,ub'")
    p.add_argument("--stats", help="normalization stats (default: stats.norm next to --pred)")
    p.add_argument("--start", type=int, default=5, help="first frame scored (default 5)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="plot metric curves")
    p.add_argument("--metrics", required=True, help="directory written by evaluate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args) or 0
    except (MSTMError, ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
