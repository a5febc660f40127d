"""Acceptance criteria 1-8, each at its stated tolerance and time budget.

Every test prints one ``criterion N PASS/FAIL`` line; the lines are repeated
in the pytest terminal summary.  Criterion 6 runs the full desk-scale
pipeline through the CLI and takes well over an hour on one core.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_acceptance
from mstm.cli import main
from mstm.config import file_sha256
from mstm.fields import DatasetSplit, normalize, read_container
from mstm.hydro.geometry import GeometryConfig
from mstm.hydro.solver import CLOSED_BOX, compute_dt, step
from mstm.hydro.simulate import run_simulation
from mstm.metrics import (
    BOUNDS,
    build_masks,
    conservation_of_mass,
    masked_qoi,
    mse_metric,
    read_csv,
    samplewise_stats,
    soft_iou,
    ssim,
)
from mstm.nn.checkpoint import load_checkpoint
from mstm.nn.model import ModelConfig, conv_block, init_params, param_breakdown, param_count, param_shapes, predict
from mstm.training import TrainConfig, rollout, stats_from_checkpoint, teacher_forced_loss, train

import oracles
from test_model import TINY, finite_difference_errors
from test_solver import blast_state, sod_l1


def run_cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"mstm {' '.join(map(str, argv))} exited {code}"


# 1 -------------------------------------------------------------------------------


def test_criterion_1_architecture():
    cfg = ModelConfig()
    params = init_params(cfg, seed=0)
    window = np.random.default_rng(0).uniform(size=(5, 7, 60, 60)).astype(np.float32)
    tic = time.perf_counter()
    out_shape = predict(window, params, cfg).shape
    feat_shape = conv_block(window[0], params, cfg).shape
    parts = param_breakdown(cfg)
    total = param_count(cfg)
    elapsed = time.perf_counter() - tic
    shapes = param_shapes(cfg)
    by_layer = {}
    for name, shape in shapes.items():
        layer = name.split(".")[0]
        if layer == "lstm":
            layer = "lstm_" + name.rsplit("_", 1)[1]
        by_layer[layer] = by_layer.get(layer, 0) + int(np.prod(shape))
    arith = {
        "conv1": 7 * 64 * 3 * 3 + 64,
        "conv2": 64 * 128 * 3 * 3 + 128,
        "lstm_l0": 4 * 512 * (128 * 15 * 15) + 4 * 512 * 512 + 2 * 4 * 512,
        **{f"lstm_l{i}": 4 * 512 * 512 * 2 + 2 * 4 * 512 for i in (1, 2, 3)},
        "fc": 512 * 7 * 60 * 60 + 7 * 60 * 60,
    }
    print(f"param_count {total}: " + ", ".join(f"{k} {v}" for k, v in parts.items()))
    ok = (
        out_shape == (1, 7, 60, 60)
        and feat_shape == (128, 15, 15)
        and parts == arith == by_layer
        and total == sum(arith.values())
        and elapsed < 1.0
    )
    detail = f"output {out_shape}, features {feat_shape}, params {total}, {elapsed:.2f} s"
    assert record_acceptance(1, "architecture fidelity", ok, detail)


# 2 -------------------------------------------------------------------------------


def test_criterion_2_gradients():
    assert (TINY.fields, TINY.height, TINY.width, TINY.lstm_hidden, TINY.lstm_layers) == (2, 8, 8, 4, 1)
    tic = time.perf_counter()
    errors = finite_difference_errors(eps=1e-5)
    elapsed = time.perf_counter() - tic
    worst = max(errors, key=errors.get)
    ok = errors[worst] <= 1e-4 and elapsed < 120
    detail = f"max relative error {errors[worst]:.2e} ({worst}), {elapsed:.1f} s"
    assert record_acceptance(2, "gradient correctness", ok, detail)


# 3 -------------------------------------------------------------------------------


def test_criterion_3_solver():
    tic = time.perf_counter()
    l1 = sod_l1(400)
    s = blast_state()
    m0 = s.rho.sum()
    for _ in range(1000):
        s = step(s, compute_dt(s, 0.4), CLOSED_BOX)
    drift = abs(s.rho.sum() - m0) / m0
    elapsed = time.perf_counter() - tic
    ok = l1 < 0.02 and drift < 1e-10 and elapsed < 60
    detail = f"Sod L1 {l1:.4f}, mass drift {drift:.1e}, {elapsed:.1f} s"
    assert record_acceptance(3, "solver validation", ok, detail)


# 4 -------------------------------------------------------------------------------


def test_criterion_4_metric_oracles():
    bounds = BOUNDS["lattice"]
    rng = np.random.default_rng(2024)
    tic = time.perf_counter()
    worst = dict.fromkeys(("mse", "soft_iou", "ssim", "cm", "qoi", "rmse", "r2", "iou"), 0.0)
    for _ in range(100):
        g = rng.uniform(0, 1, (60, 60))
        p = np.clip(g + rng.normal(0, 0.15, g.shape), 0, 1)
        fp, fg = rng.uniform(size=g.shape), rng.uniform(size=g.shape)
        masks = build_masks(g, p, bounds)
        row = masked_qoi(p, g, masks)
        st = samplewise_stats(p, g, masks)
        rmse, r2, iou = oracles.samplewise_loops(p, g, masks.M_g, masks.M_p)
        q = oracles.qoi_sets(p, g, masks.M_g, masks.M_p)
        got_q = [row.mean_g, row.std_g, row.mean_p, row.std_p, row.diff_mean, row.diff_std]
        for key, err in (
            ("mse", abs(mse_metric(p, g) - oracles.mse_loops(p, g))),
            ("soft_iou", abs(soft_iou(p, g, bounds) - oracles.soft_iou_loops(p, g, bounds.lb, bounds.ub))),
            ("ssim", abs(ssim(p, g) - oracles.ssim_textbook(p, g))),
            ("cm", abs(conservation_of_mass(p + 0.1, g + 0.1, fp, fg)
                       - oracles.mass_error_loops(p + 0.1, g + 0.1, fp, fg))),
            ("qoi", float(np.max(np.abs(np.subtract(got_q, q))))),
            ("rmse", abs(st.rmse - rmse)),
            ("r2", abs(st.r2 - r2)),
            ("iou", abs(st.iou - iou)),
        ):
            worst[key] = max(worst[key], err)

    g = rng.uniform(0, 1, (60, 60))
    same = build_masks(g, g, bounds)
    ident_q = masked_qoi(g, g, same)
    ident_s = samplewise_stats(g, g, same)
    identity = (
        mse_metric(g, g) == 0.0
        and ssim(g, g) == pytest.approx(1.0, abs=1e-12)
        and soft_iou(g, g, bounds) == 1.0
        and conservation_of_mass(g + 0.1, g + 0.1) == 0.0
        and ident_q.diff_mean == 0.0 and ident_q.diff_std == 0.0
        and (ident_s.rmse, ident_s.r2, ident_s.iou) == (0.0, 1.0, 1.0)
    )
    elapsed = time.perf_counter() - tic
    ok = max(worst.values()) <= 1e-10 and identity and elapsed < 60
    detail = f"max |diff| {max(worst.values()):.1e} over 100 instances, identity {'ok' if identity else 'wrong'}, {elapsed:.1f} s"
    assert record_acceptance(4, "metric oracle equivalence", ok, detail)


# 5 -------------------------------------------------------------------------------


def test_criterion_5_overfit():
    tic = time.perf_counter()
    seq = run_simulation(GeometryConfig(kind="lattice", grid=64, block=4, porosity=0.4, rng_seed=1))
    _, n_fields, height, width = seq.frames.shape
    model = ModelConfig(fields=n_fields, height=height, width=width, conv1_out=4, conv2_out=8,
                        lstm_hidden=512, lstm_layers=1)
    cfg = TrainConfig.preset("desk", epochs=500, seed=0)
    # the one sequence is also the validation set, so val_loss is its teacher-forced MSE
    split = DatasetSplit((0,), (0,), (0,), 0)
    _, report, _ = train([seq], split, cfg, model)
    elapsed = time.perf_counter() - tic
    mse = report.val_loss[-1]
    ok = mse < 1e-4 and len(report) <= 500 and elapsed < 600
    detail = f"teacher-forced MSE {mse:.2e} after {len(report)} epochs, {elapsed:.0f} s"
    assert record_acceptance(5, "training sanity (overfit)", ok, detail)


# 6 -------------------------------------------------------------------------------

DESK_TRAIN_CFG = """\
preset = desk
epochs = 200
conv1_out = 32
conv2_out = 64
lstm_hidden = 128
lstm_layers = 2
"""


def desk_run_metrics(workdir):
    """Rollout and teacher-forced RMSE (normalized units) plus the SSIM curve of a finished run."""
    workdir = Path(workdir)
    ckpt = load_checkpoint(workdir / "model.mstw")
    stats = stats_from_checkpoint(ckpt)
    truth = read_container(workdir / "ro/truth.mstm")
    pred = read_container(workdir / "ro/pred.mstm")
    window = ckpt.model.window
    sq = []
    for t, p in zip(truth, pred):
        if len(p) != len(t):
            return None
        diff = normalize(p.frames[window:], stats) - normalize(t.frames[window:], stats)
        sq.extend(np.mean(diff.astype(np.float64) ** 2, axis=(1, 2, 3)))
    rollout_rmse = float(np.sqrt(np.mean(sq)))
    tf_mse = teacher_forced_loss(ckpt.params, ckpt.model, [normalize(t.frames, stats) for t in truth], window)
    curves = read_csv(workdir / "ev/curves.csv")
    return rollout_rmse, float(np.sqrt(tf_mse)), [r["ssim"] for r in curves]


def test_criterion_6_desk_run(tmp_path):
    tic = time.perf_counter()
    (tmp_path / "train.cfg").write_text(DESK_TRAIN_CFG)
    run_cli("--seed", 7, "generate", "--kind", "lattice", "--preset", "toy", "-n", 40, "--out", tmp_path / "data.mstm")
    run_cli("--seed", 7, "--config", tmp_path / "train.cfg", "train",
            "--data", tmp_path / "data.mstm", "--out", tmp_path / "model.mstw")
    run_cli("rollout", "--checkpoint", tmp_path / "model.mstw", "--data", tmp_path / "data.mstm",
            "--out", tmp_path / "ro")
    run_cli("evaluate", "--pred", tmp_path / "ro/pred.mstm", "--truth", tmp_path / "ro/truth.mstm",
            "--out", tmp_path / "ev")
    elapsed = time.perf_counter() - tic
    n_test = len(read_container(tmp_path / "ro/truth.mstm"))
    result = desk_run_metrics(tmp_path)
    if result is None:
        assert record_acceptance(6, "desk-scale end-to-end", False, "a rollout was truncated")
    rmse, tf_rmse, ssim_curve = result
    ok = n_test == 4 and rmse < 0.15 and rmse <= 3 * tf_rmse and min(ssim_curve) > 0.8 and elapsed < 7200
    detail = (
        f"rollout RMSE {rmse:.4f}, teacher-forced RMSE {tf_rmse:.4f} (ratio {rmse / tf_rmse:.2f}), "
        f"min SSIM {min(ssim_curve):.3f}, {n_test} test sequences, {elapsed / 60:.0f} min"
    )
    assert record_acceptance(6, "desk-scale end-to-end", ok, detail)


# 7 -------------------------------------------------------------------------------


def test_criterion_7_rollout_queue():
    cfg = ModelConfig(fields=2, height=8, width=8, conv1_out=3, conv2_out=4, lstm_hidden=8, lstm_layers=1)
    params = init_params(cfg, 3)
    seeds = np.random.default_rng(5).uniform(size=(5, 2, 8, 8)).astype(np.float32)
    n_steps = 12
    preds, windows = rollout(params, cfg, seeds, n_steps, return_windows=True)
    queue = [seeds[i] for i in range(5)]
    mismatches = 0
    for k in range(n_steps):
        if not np.array_equal(windows[k], np.stack(queue)):
            mismatches += 1
        if not np.array_equal(preds[k], predict(np.stack(queue), params, cfg)[0]):
            mismatches += 1
        queue = queue[1:] + [preds[k]]
    ok = mismatches == 0 and len(preds) == n_steps
    assert record_acceptance(7, "rollout mechanics", ok, f"{n_steps} steps, {mismatches} mismatches")


# 8 -------------------------------------------------------------------------------

GEN_CFG = "kind = lattice\ngrid = 32\nblock = 2\nn_frames = 8\nporosity_range = 0.1, 0.3\n"
TRAIN_CFG = "epochs = 2\nbatch_size = 8\nconv1_out = 2\nconv2_out = 2\nlstm_hidden = 8\nlstm_layers = 1\n"


def pipeline(root, monkeypatch):
    root.mkdir()
    monkeypatch.chdir(root)
    Path("gen.cfg").write_text(GEN_CFG)
    Path("train.cfg").write_text(TRAIN_CFG)
    run_cli("--seed", 11, "--config", "gen.cfg", "generate", "-n", 4, "--out", "out/data.mstm")
    run_cli("--seed", 11, "--config", "train.cfg", "train", "--data", "out/data.mstm", "--out", "out/m.mstw")
    run_cli("rollout", "--checkpoint", "out/m.mstw", "--data", "out/data.mstm", "--out", "out/ro")
    run_cli("evaluate", "--pred", "out/ro/pred.mstm", "--truth", "out/ro/truth.mstm", "--out", "out/ev")
    run_cli("report", "--metrics", "out/ev", "--out", "out/rep")
    return {str(p.relative_to(root / "out")): file_sha256(p) for p in sorted((root / "out").rglob("*")) if p.is_file()}


def test_criterion_8_reproducibility(tmp_path, monkeypatch):
    first = pipeline(tmp_path / "a", monkeypatch)
    second = pipeline(tmp_path / "b", monkeypatch)
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    commands = {"generate", "train", "rollout", "evaluate", "report"}
    covered = {k.split("/")[-1].split(".")[0] for k in first if k.endswith(".manifest.json")}
    covered = {"generate" if c == "data" else "train" if c == "m" else c for c in covered}
    ok = not differing and commands <= covered
    detail = f"{len(first)} files from {len(covered)} commands, {len(differing)} differ"
    if differing:
        detail += ": " + ", ".join(differing[:5])
    assert record_acceptance(8, "reproducibility", ok, detail)
