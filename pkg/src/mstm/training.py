"""Teacher-forced training and sliding-window autoregressive rollout."""

from __future__ import annotations

import csv
import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import NonFiniteError, StatsMismatchError
from .fields import NormStats, Sequence, compute_norm_stats, denormalize, normalize
from .nn import model as mstm
from .nn.adam import BETA1, BETA2, EPS, AdamState, adam_update
from .nn.checkpoint import Checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``chunk`` controls how windows are shuffled each epoch: windows are cut
    into runs of ``chunk`` consecutive offsets from one sequence and the runs
    are shuffled.  ``chunk = 1`` is a plain global shuffle over every
    (sequence, offset) pair; larger runs let a batch share frames and make
    each step cheaper.
    """

    epochs: int = 200
    batch_size: int = 32
    lr: float = 5e-4
    window: int = 5
    seed: int = 0
    checkpoint_interval: int = 0
    patience: int = 0
    chunk: int = 8
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.window < 1 or self.chunk < 1:
            raise ValueError("window and chunk must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.checkpoint_interval < 0 or self.patience < 0:
            raise ValueError("checkpoint_interval and patience must be >= 0")

    @classmethod
    def preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ValueError(f"unknown training preset {name!r}; choose from {sorted(PRESETS)}")
        return replace(PRESETS[name], **overrides)

    def to_dict(self):
        return asdict(self)


PRESETS = {
    # full-scale regime: 1000 epochs, batch 256, global shuffle
    "paper": TrainConfig(epochs=1000, batch_size=256, chunk=1),
    "desk": TrainConfig(epochs=200, batch_size=32, chunk=8),
}


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    checkpoint_id: str | None = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.epochs)

    @property
    def wall_time(self):
        return float(sum(self.seconds))

    def append(self, epoch, train_loss, val_loss, seconds):
        self.epochs.append(int(epoch))
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.seconds.append(float(seconds))

    def history(self):
        return {"train": self.train_loss, "val": self.val_loss, "seconds": self.seconds}

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for row in zip(self.epochs, self.train_loss, self.val_loss, self.seconds):
                writer.writerow([row[0], repr(row[1]), repr(row[2]), f"{row[3]:.3f}"])


class TrainingAborted(NonFiniteError):
    """Non-finite loss; ``last_checkpoint`` names the last good checkpoint id (or None)."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class WindowPool:
    """Normalized frames of several sequences in one array, addressed by window id."""

    def __init__(self, frames_list, window):
        self.window = window
        lengths = [len(f) for f in frames_list]
        if any(n < window + 1 for n in lengths):
            raise ValueError(f"every sequence needs at least {window + 1} frames")
        self.frames = np.concatenate(frames_list).astype(np.float32, copy=False)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        # one row per window: (sequence, offset, first frame index)
        rows = [(s, k, starts[s] + k) for s, n in enumerate(lengths) for k in range(n - window)]
        self.windows = np.array(rows, dtype=np.int64).reshape(-1, 3)

    def __len__(self):
        return len(self.windows)

    def batch(self, ids):
        """Shared frames, ``(B, window)`` index into them, and targets for window ``ids``."""
        first = self.windows[ids, 2]
        idx = first[:, None] + np.arange(self.window)
        uniq, inverse = np.unique(idx, return_inverse=True)
        return self.frames[uniq], inverse.reshape(idx.shape), self.frames[first + self.window]

    def epoch_order(self, rng, chunk):
        """Shuffled window ids, grouped into runs of ``chunk`` consecutive offsets."""
        if chunk == 1:
            return rng.permutation(len(self))
        runs = []
        for s in np.unique(self.windows[:, 0]):
            ids = np.flatnonzero(self.windows[:, 0] == s)
            phase = int(rng.integers(chunk))
            cuts = np.arange(phase or chunk, len(ids), chunk)
            runs.extend(np.split(ids, cuts))
        order = rng.permutation(len(runs))
        return np.concatenate([runs[i] for i in order])


def _rng_for_epoch(seed, epoch):
    return np.random.default_rng([seed, epoch])


def batch_loss(pool, ids, params, model_cfg):
    frames, index, targets = pool.batch(ids)
    pred = mstm.forward_indexed(frames, index, params, model_cfg)
    return mstm.mse_loss(pred, targets)


def teacher_forced_loss(params, model_cfg, frames_list, window=5, batch_size=64):
    """Mean per-window MSE over every teacher-forced window of normalized ``frames_list``."""
    pool = WindowPool(frames_list, window)
    total = 0.0
    for lo in range(0, len(pool), batch_size):
        ids = np.arange(lo, min(lo + batch_size, len(pool)))
        total += batch_loss(pool, ids, params, model_cfg) * len(ids)
    return total / len(pool)


def _normalized(sequences, idx, stats):
    return [normalize(sequences[i].frames, stats) for i in idx]


def train(
    sequences,
    split,
    cfg,
    model_cfg,
    *,
    checkpoint_path=None,
    resume=None,
    record_timing=False,
):
    """Fit the model to the training split; returns ``(params, report, stats)``.

    Normalization statistics come from the training sequences only.  Windows
    of the training split are visited once per epoch in an order fixed by
    ``(cfg.seed, epoch)``; the final partial batch is kept at its natural
    size.  Validation loss is teacher-forced and computed without updates.
    Passing a :class:`Checkpoint` as ``resume`` continues its epoch counter
    and optimizer state.
    """
    if cfg.window != model_cfg.window:
        raise ValueError(f"train window {cfg.window} != model window {model_cfg.window}")
    stats = compute_norm_stats([sequences[i] for i in split.train])
    train_pool = WindowPool(_normalized(sequences, split.train, stats), cfg.window)
    val_frames = _normalized(sequences, split.val, stats)
    report = TrainReport()

    if resume is None:
        params = mstm.init_params(model_cfg, cfg.seed)
        adam = AdamState.zeros_like(params)
        start = 1
    else:
        if resume.model != model_cfg:
            raise ValueError("checkpoint model config differs from the requested model")
        if resume.stats_sha256 != stats.sha256():
            raise StatsMismatchError("checkpoint was trained with different normalization stats")
        # copies: the loop below updates parameters and moments in place
        params = {k: np.array(v, copy=True) for k, v in resume.params.items()}
        adam = (
            AdamState(resume.adam.step, {k: v.copy() for k, v in resume.adam.m.items()},
                      {k: v.copy() for k, v in resume.adam.v.items()})
            if resume.adam else AdamState.zeros_like(params)
        )
        history = resume.meta.get("history", {})
        for e, (tr, va, sec) in enumerate(
            zip(history.get("train", []), history.get("val", []), history.get("seconds", [])), start=1
        ):
            report.append(e, tr, va, sec)
        start = resume.epoch + 1

    meta_base = {
        "norm_stats_sha256": stats.sha256(),
        "norm_mins": stats.mins.tolist(),
        "norm_maxs": stats.maxs.tolist(),
        "split_seed": split.rng_seed,
        "train": cfg.to_dict(),
    }

    def write(epoch):
        if checkpoint_path is None:
            return None
        meta = dict(meta_base, epoch=epoch, history=report.history())
        return save_checkpoint(checkpoint_path, Checkpoint(model_cfg, params, meta, adam))

    last_ckpt = None
    best_val, stale = np.inf, 0
    epoch = start - 1
    for epoch in range(start, cfg.epochs + 1):
        tic = time.perf_counter()
        order = train_pool.epoch_order(_rng_for_epoch(cfg.seed, epoch), cfg.chunk)
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            ids = order[lo : lo + cfg.batch_size]
            frames, index, targets = train_pool.batch(ids)
            try:
                loss, grads = mstm.loss_and_grads_indexed(frames, index, targets, params, model_cfg)
            except NonFiniteError as exc:
                raise TrainingAborted(f"epoch {epoch}: {exc}", last_ckpt) from exc
            if not np.isfinite(loss):
                raise TrainingAborted(f"epoch {epoch}: non-finite training loss", last_ckpt)
            adam_update(params, grads, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            total += loss * len(ids)
        train_loss = total / len(order)
        val_loss = teacher_forced_loss(params, model_cfg, val_frames, cfg.window) if val_frames else float("nan")
        seconds = time.perf_counter() - tic if record_timing else 0.0
        report.append(epoch, train_loss, val_loss, seconds)
        log.info("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)

        if cfg.checkpoint_interval and epoch % cfg.checkpoint_interval == 0:
            last_ckpt = write(epoch)
        if cfg.patience:
            if val_loss < best_val:
                best_val, stale = val_loss, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    report.stopped_early = True
                    break
    report.checkpoint_id = write(epoch)
    return params, report, stats


def stats_from_checkpoint(ckpt):
    """Rebuild the training NormStats stored in a checkpoint and verify its hash."""
    stats = NormStats(ckpt.meta["norm_mins"], ckpt.meta["norm_maxs"])
    if stats.sha256() != ckpt.stats_sha256:
        raise StatsMismatchError("stored normalization stats do not match their recorded hash")
    return stats


def rollout(params, model_cfg, seed_frames, n_steps, return_windows=False):
    """Autoregressive prediction from ``window`` normalized seed frames.

    Each prediction replaces the oldest frame of the input window.  Returns
    an ``(n, F, H, W)`` array with ``n == n_steps`` unless a prediction turns
    non-finite, in which case the rollout stops there and logs a warning.
    With ``return_windows`` the input window used at every step is returned too.
    """
    seeds = np.asarray(seed_frames, dtype=np.float32)
    if seeds.shape[0] != model_cfg.window:
        raise ValueError(f"need {model_cfg.window} seed frames, got {seeds.shape[0]}")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    queue = deque(seeds, maxlen=model_cfg.window)
    preds, windows = [], []
    for step in range(n_steps):
        window = np.stack(queue)
        if return_windows:
            windows.append(window)
        try:
            nxt = mstm.forward(window[None], params, model_cfg)[0]
        except NonFiniteError as exc:
            log.warning("rollout truncated at step %d: %s", step, exc)
            break
        if not np.all(np.isfinite(nxt)):
            log.warning("rollout truncated at step %d: non-finite prediction", step)
            break
        preds.append(nxt)
        queue.append(nxt)
    out = np.stack(preds) if preds else np.empty((0,) + seeds.shape[1:], np.float32)
    return (out, windows) if return_windows else out


def evaluate_rollouts(params, model_cfg, stats, test_sequences):
    """Roll each sequence out from its first frames; returns ``[(truth, prediction)]``.

    Predicted sequences are in physical units and start with the true seed
    frames, so they have the ground truth's length unless a rollout was
    truncated.
    """
    w = model_cfg.window
    pairs = []
    for seq in test_sequences:
        norm = normalize(seq.frames, stats)
        preds = rollout(params, model_cfg, norm[:w], len(seq) - w)
        full = np.concatenate([seq.frames[:w], denormalize(preds, stats)]) if len(preds) else seq.frames[:w]
        pairs.append((seq, Sequence(full, seq.params, seq.frame_interval)))
    return pairs
