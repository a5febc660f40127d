import numpy as np
import pytest

from mstm.errors import StatsMismatchError
from mstm.fields import DatasetSplit, Sequence, compute_norm_stats, normalize, split_dataset
from mstm.nn import model as mstm
from mstm.nn.checkpoint import load_checkpoint
from mstm.nn.model import ModelConfig, forward, init_params
from mstm.training import (
    TrainConfig,
    TrainingAborted,
    WindowPool,
    evaluate_rollouts,
    rollout,
    stats_from_checkpoint,
    teacher_forced_loss,
    train,
)

CFG = ModelConfig(fields=2, height=8, width=8, conv1_out=3, conv2_out=4, lstm_hidden=8, lstm_layers=1)


def moving_blob(T=12, shift=0.0, amp=1.0):
    y, x = np.mgrid[0:8, 0:8]
    frames = np.empty((T, 2, 8, 8), np.float32)
    for t in range(T):
        cx = 1 + 0.4 * t + shift
        frames[t, 0] = amp * np.exp(-((x - cx) ** 2 + (y - 4) ** 2) / 4)
        frames[t, 1] = 0.5 * frames[t, 0] + 0.1 * t
    return Sequence(frames, {"shift": shift}, 1.0)


@pytest.fixture(scope="module")
def data():
    return [moving_blob(shift=0.3 * i, amp=1 + 0.1 * i) for i in range(10)]


def small_cfg(**kw):
    return TrainConfig.preset("desk", **{"epochs": 3, "batch_size": 8, **kw})


def test_presets():
    assert TrainConfig.preset("paper").epochs == 1000 and TrainConfig.preset("paper").batch_size == 256
    assert TrainConfig.preset("desk").epochs == 200 and TrainConfig.preset("desk").batch_size == 32
    assert TrainConfig().lr == 5e-4
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig.preset("huge")


def test_report_rows_and_loss_range(data, tmp_path):
    split = split_dataset(len(data), 0)
    _, report, _ = train(data, split, small_cfg(), CFG)
    assert len(report) == 3 and report.epochs == [1, 2, 3]
    assert 0 < report.train_loss[0] <= 1
    report.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,seconds" and len(lines) == 4


def test_training_is_deterministic(data):
    split = split_dataset(len(data), 0)
    p1, r1, _ = train(data, split, small_cfg(), CFG)
    p2, r2, _ = train(data, split, small_cfg(), CFG)
    assert r1.train_loss == r2.train_loss and r1.val_loss == r2.val_loss
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)


def test_resume_continues_bitwise(data, tmp_path):
    split = split_dataset(len(data), 0)
    full_params, full, _ = train(data, split, small_cfg(epochs=4), CFG)
    train(data, split, small_cfg(epochs=2), CFG, checkpoint_path=tmp_path / "c.mstw")
    ckpt = load_checkpoint(tmp_path / "c.mstw")
    assert ckpt.epoch == 2
    params, report, _ = train(data, split, small_cfg(epochs=4), CFG, resume=ckpt)
    assert report.epochs == [1, 2, 3, 4]
    assert report.train_loss == full.train_loss
    assert all(np.array_equal(params[k], full_params[k]) for k in params)


def test_resume_with_other_data_is_refused(data, tmp_path):
    split = split_dataset(len(data), 0)
    train(data, split, small_cfg(epochs=1), CFG, checkpoint_path=tmp_path / "c.mstw")
    other = [moving_blob(shift=0.3 * i, amp=2.0) for i in range(10)]
    with pytest.raises(StatsMismatchError):
        train(other, split, small_cfg(epochs=2), CFG, resume=load_checkpoint(tmp_path / "c.mstw"))


def test_checkpoint_embeds_stats(data, tmp_path):
    split = split_dataset(len(data), 0)
    _, _, stats = train(data, split, small_cfg(epochs=1), CFG, checkpoint_path=tmp_path / "c.mstw")
    ckpt = load_checkpoint(tmp_path / "c.mstw")
    assert ckpt.stats_sha256 == stats.sha256()
    assert stats_from_checkpoint(ckpt).to_bytes() == stats.to_bytes()
    assert stats.sha256() == compute_norm_stats([data[i] for i in split.train]).sha256()


def test_nonfinite_loss_aborts_with_last_checkpoint(data, tmp_path, monkeypatch):
    split = split_dataset(len(data), 0)
    real = mstm.loss_and_grads_indexed
    calls = {"n": 0}

    def flaky(*args):
        calls["n"] += 1
        loss, grads = real(*args)
        return (float("nan") if calls["n"] > 2 else loss), grads

    monkeypatch.setattr(mstm, "loss_and_grads_indexed", flaky)
    cfg = small_cfg(epochs=5, batch_size=64, checkpoint_interval=1)
    with pytest.raises(TrainingAborted) as exc:
        train(data, split, cfg, CFG, checkpoint_path=tmp_path / "c.mstw")
    assert exc.value.last_checkpoint is not None
    assert load_checkpoint(tmp_path / "c.mstw").epoch == 2


def test_epoch_visits_every_window_in_contiguous_slices(data):
    frames = [s.frames for s in data[:3]]
    pool = WindowPool(frames, 5)
    assert len(pool) == 3 * 7
    for chunk in (1, 4):
        order = pool.epoch_order(np.random.default_rng(0), chunk)
        assert sorted(order.tolist()) == list(range(len(pool)))
    shared, index, targets = pool.batch(order[:8])
    for row, wid in enumerate(order[:8]):
        s, k, _ = pool.windows[wid]
        assert np.array_equal(shared[index[row]], frames[s][k : k + 5])
        assert np.array_equal(targets[row], frames[s][k + 5])


def test_chunked_order_groups_consecutive_offsets(data):
    pool = WindowPool([s.frames for s in data[:2]], 5)
    order = pool.epoch_order(np.random.default_rng(1), 3)
    runs = np.split(order, np.flatnonzero(np.diff(order) != 1) + 1)
    assert max(len(r) for r in runs) <= 3 * 2  # neighbouring runs may happen to line up


def test_teacher_forced_loss_equals_mean_window_mse(data):
    params = init_params(CFG, 0)
    frames = [s.frames for s in data[:2]]
    losses = [
        mstm.mse_loss(forward(f[k : k + 5][None], params, CFG), f[k + 5][None])
        for f in frames
        for k in range(len(f) - 5)
    ]
    assert teacher_forced_loss(params, CFG, frames, 5, batch_size=3) == pytest.approx(np.mean(losses), rel=1e-6)


def test_rollout_single_step_equals_forward(data):
    params = init_params(CFG, 1)
    seeds = data[0].frames[:5]
    out = rollout(params, CFG, seeds, 1)
    assert np.array_equal(out[0], forward(seeds[None], params, CFG)[0])


def test_rollout_queue_matches_oracle(data):
    params = init_params(CFG, 2)
    seeds = data[1].frames[:5]
    preds, windows = rollout(params, CFG, seeds, 9, return_windows=True)
    assert len(preds) == len(windows) == 9
    queue = [("seed", i) for i in range(5)]
    for step, window in enumerate(windows):
        expect = np.stack([seeds[i] if kind == "seed" else preds[i] for kind, i in queue])
        assert np.array_equal(window, expect)
        n_model = sum(kind == "pred" for kind, _ in queue)
        assert len(window) == 5 and n_model == min(step, 5)
        queue = queue[1:] + [("pred", step)]


def test_rollout_truncates_on_nonfinite(data):
    params = init_params(CFG, 2)
    params["fc.bias"][0] = np.nan
    out = rollout(params, CFG, data[0].frames[:5], 4)
    assert out.shape == (0, 2, 8, 8)


def test_evaluate_rollouts_pairs(data):
    params = init_params(CFG, 2)
    stats = compute_norm_stats(data)
    pairs = evaluate_rollouts(params, CFG, stats, data[:2])
    for truth, pred in pairs:
        assert len(pred) == len(truth)
        assert len(pred) - 5 == len(truth) - 5
        assert np.array_equal(pred.frames[:5], truth.frames[:5])


def test_untrained_rollout_error_grows():
    seq = moving_blob(T=46)
    params = init_params(CFG, 5)
    stats = compute_norm_stats([seq])
    norm = normalize(seq.frames, stats)
    preds = rollout(params, CFG, norm[:5], 41)
    err = [mstm.mse_loss(preds[k], norm[5 + k]) for k in range(41)]
    assert err[40] >= err[0]


def test_single_sequence_split_for_overfit_runs():
    seq = moving_blob()
    split = DatasetSplit((0,), (0,), (0,), 0)
    _, report, _ = train([seq], split, small_cfg(epochs=2), CFG)
    assert len(report) == 2
