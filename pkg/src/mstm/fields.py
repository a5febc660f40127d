"""Multi-field sequences: normalization, splitting, windowing and the binary container.

A frame is a ``(F, H, W)`` array with the channel order given by
:data:`FIELD_NAMES`.  A :class:`Sequence` stacks ``T`` frames into a single
``(T, F, H, W)`` float32 array.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContainerError, MSTMError

FIELD_NAMES = (
    "density",
    "velocity_x",
    "velocity_y",
    "materials",
    "pressure",
    "energy",
    "temperature",
)
N_FIELDS = len(FIELD_NAMES)
MATERIALS = FIELD_NAMES.index("materials")
DENSITY = FIELD_NAMES.index("density")

CONTAINER_MAGIC = b"MSTM"
CONTAINER_VERSION = 1
STATS_MAGIC = b"MSTN"


@dataclass(frozen=True, eq=False)
class Sequence:
    """Ordered frames plus the parameters that produced them.

    ``frame_interval`` is the time between recorded frames in microseconds.
    """

    frames: np.ndarray
    params: dict = field(default_factory=dict)
    frame_interval: float = 1.0

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if frames.ndim != 4:
            raise ValueError(f"frames must be (T, F, H, W), got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "params", {str(k): float(v) for k, v in self.params.items()})

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-field extrema from the training split."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64).copy()
        maxs = np.asarray(self.maxs, dtype=np.float64).copy()
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ValueError("mins and maxs must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(mins)) and np.all(np.isfinite(maxs))):
            raise ValueError("normalization stats must be finite")
        if np.any(maxs < mins):
            raise ValueError("max < min for at least one field")
        mins.flags.writeable = False
        maxs.flags.writeable = False
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def n_fields(self):
        return self.mins.shape[0]

    def to_bytes(self):
        parts = [STATS_MAGIC, struct.pack("<I", self.n_fields)]
        for lo, hi in zip(self.mins, self.maxs):
            parts.append(struct.pack("<dd", lo, hi))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != STATS_MAGIC:
            raise ContainerError(ContainerError.BAD_MAGIC, "not a normalization-stats file")
        if len(data) < 8:
            raise ContainerError(ContainerError.TRUNCATED, "stats header truncated")
        (n,) = struct.unpack_from("<I", data, 4)
        if len(data) != 8 + 16 * n:
            raise ContainerError(
                ContainerError.TRUNCATED if len(data) < 8 + 16 * n else ContainerError.SHAPE,
                f"expected {8 + 16 * n} bytes for {n} fields, got {len(data)}",
            )
        pairs = np.frombuffer(data, dtype="<f8", offset=8).reshape(n, 2)
        return cls(pairs[:, 0], pairs[:, 1])

    def sha256(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    test: tuple
    rng_seed: int


def compute_norm_stats(train_sequences):
    """Per-field min/max over every cell, frame and sequence."""
    if not train_sequences or all(len(s) == 0 for s in train_sequences):
        raise MSTMError("empty training set")
    n_fields = train_sequences[0].frames.shape[1]
    mins = np.full(n_fields, np.inf)
    maxs = np.full(n_fields, -np.inf)
    for seq in train_sequences:
        if seq.frames.shape[1] != n_fields:
            raise ValueError("sequences disagree on the number of fields")
        if len(seq) == 0:
            continue
        mins = np.minimum(mins, seq.frames.min(axis=(0, 2, 3)))
        maxs = np.maximum(maxs, seq.frames.max(axis=(0, 2, 3)))
    return NormStats(mins, maxs)


def _check_fields(frames, stats):
    frames = np.asarray(frames)
    if frames.ndim < 3 or frames.shape[-3] != stats.n_fields:
        raise ValueError(
            f"frame shape {frames.shape} does not match stats with {stats.n_fields} fields"
        )
    return frames


def normalize(frames, stats):
    """Map each field to ``(v - min) / (max - min)``.

    Works on a single ``(F, H, W)`` frame or any stack ``(..., F, H, W)``.
    Degenerate fields (``max == min``) map to zero.  Values outside the
    training range are not clipped.
    """
    frames = _check_fields(frames, stats)
    out_dtype = frames.dtype if frames.dtype in (np.float32, np.float64) else np.float64
    span = stats.maxs - stats.mins
    degenerate = span == 0
    scale = np.where(degenerate, 0.0, 1.0 / np.where(degenerate, 1.0, span))
    x = (frames.astype(np.float64) - stats.mins[:, None, None]) * scale[:, None, None]
    return x.astype(out_dtype)


def denormalize(frames, stats):
    """Inverse of :func:`normalize`; degenerate fields return the stored min."""
    frames = _check_fields(frames, stats)
    out_dtype = frames.dtype if frames.dtype in (np.float32, np.float64) else np.float64
    span = stats.maxs - stats.mins
    x = frames.astype(np.float64) * span[:, None, None] + stats.mins[:, None, None]
    return x.astype(out_dtype)


def split_dataset(n_sequences, seed):
    """Deterministic 80/10/10 partition of ``range(n_sequences)``.

    Validation and test each get ``max(1, floor(n / 10))`` sequences; the
    remainder goes to training.
    """
    if n_sequences < 3:
        raise ValueError(f"need at least 3 sequences to split, got {n_sequences}")
    n_hold = max(1, n_sequences // 10)
    perm = np.random.default_rng(seed).permutation(n_sequences)
    n_train = n_sequences - 2 * n_hold
    train = tuple(sorted(int(i) for i in perm[:n_train]))
    val = tuple(sorted(int(i) for i in perm[n_train : n_train + n_hold]))
    test = tuple(sorted(int(i) for i in perm[n_train + n_hold :]))
    return DatasetSplit(train, val, test, int(seed))


def window_samples(seq, window=5):
    """All teacher-forcing samples of a sequence as ``(inputs, target)`` pairs.

    Sample ``k`` has inputs ``frames[k:k+window]`` and target ``frames[k+window]``.
    """
    frames = seq.frames if isinstance(seq, Sequence) else np.asarray(seq)
    n = frames.shape[0]
    if n < window + 1:
        raise ValueError(f"sequence of length {n} is too short for window {window}")
    return [(frames[k : k + window], frames[k + window]) for k in range(n - window)]


# -- binary container ---------------------------------------------------------


def _encode_sequence(seq):
    T, F, H, W = seq.frames.shape
    parts = [struct.pack("<IIIIf", T, F, H, W, seq.frame_interval), struct.pack("<I", len(seq.params))]
    for key, value in seq.params.items():
        raw = key.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<d", value))
    parts.append(seq.frames.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(parts)


def encode_container(sequences):
    parts = [CONTAINER_MAGIC, bytes([CONTAINER_VERSION]), struct.pack("<I", len(sequences))]
    parts.extend(_encode_sequence(s) for s in sequences)
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ContainerError(
                ContainerError.TRUNCATED,
                f"truncated while reading {what} at byte {self.pos} (need {n}, have {len(self.data) - self.pos})",
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(data):
    data = bytes(data)
    if data[:4] != CONTAINER_MAGIC:
        raise ContainerError(ContainerError.BAD_MAGIC, f"bad magic {data[:4]!r}")
    r = _Reader(data)
    r.take(4, "magic")
    (version,) = r.unpack("<B", "version")
    if version != CONTAINER_VERSION:
        raise ContainerError(ContainerError.VERSION, f"unsupported container version {version}")
    (n_seq,) = r.unpack("<I", "sequence count")
    sequences = []
    shape0 = None
    for s in range(n_seq):
        T, F, H, W, interval = r.unpack("<IIIIf", f"header of sequence {s}")
        if min(F, H, W) == 0:
            raise ContainerError(ContainerError.SHAPE, f"sequence {s} has a zero dimension")
        if shape0 is None:
            shape0 = (F, H, W)
        elif (F, H, W) != shape0:
            raise ContainerError(
                ContainerError.SHAPE, f"sequence {s} frame shape {(F, H, W)} differs from {shape0}"
            )
        (n_params,) = r.unpack("<I", f"parameter count of sequence {s}")
        params = {}
        for _ in range(n_params):
            (klen,) = r.unpack("<I", "key length")
            key = r.take(klen, "key").decode("utf-8")
            (value,) = r.unpack("<d", f"value of {key!r}")
            params[key] = value
        n_bytes = 4 * T * F * H * W
        payload = np.frombuffer(r.take(n_bytes, f"payload of sequence {s}"), dtype="<f4")
        frames = payload.reshape(T, F, H, W).astype(np.float32)
        try:
            sequences.append(Sequence(frames, params, float(interval)))
        except ValueError as exc:
            raise ContainerError(ContainerError.SHAPE, f"sequence {s}: {exc}") from exc
    if r.pos != len(data):
        raise ContainerError(
            ContainerError.SHAPE, f"{len(data) - r.pos} trailing bytes after the last sequence"
        )
    return sequences


def write_container(path, sequences):
    Path(path).write_bytes(encode_container(list(sequences)))


def read_container(path):
    return decode_container(Path(path).read_bytes())
