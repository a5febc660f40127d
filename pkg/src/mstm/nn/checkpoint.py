"""Binary checkpoint: model config, metadata, parameter tensors, optional Adam moments.

Layout (little-endian)::

    b"MSTW" | u8 version | u32 len | UTF-8 JSON header | u32 n_tensors
    n_tensors x (u32 len | UTF-8 name | u32 rank | rank x u32 dims | f32 payload)
    u32 CRC32 of every preceding byte

The JSON header holds the ``ModelConfig`` under ``"model"`` and free-form
metadata (norm-stats hash, epoch, seeds) under ``"meta"``.  Adam moments are
stored as extra tensors named ``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContainerError
from .adam import AdamState
from .model import ModelConfig, param_shapes

MAGIC = b"MSTW"
VERSION = 1


@dataclass
class Checkpoint:
    model: ModelConfig
    params: dict
    meta: dict = field(default_factory=dict)
    adam: AdamState | None = None

    @property
    def epoch(self):
        return int(self.meta.get("epoch", 0))

    @property
    def stats_sha256(self):
        return self.meta.get("norm_stats_sha256")


def _tensor_bytes(name, arr):
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def encode_checkpoint(ckpt):
    meta = dict(ckpt.meta)
    tensors = list(ckpt.params.items())
    if ckpt.adam is not None:
        meta["adam_step"] = ckpt.adam.step
        tensors += [(f"adam.m/{k}", v) for k, v in ckpt.adam.m.items()]
        tensors += [(f"adam.v/{k}", v) for k, v in ckpt.adam.v.items()]
    header = json.dumps({"model": ckpt.model.to_dict(), "meta": meta}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<BI", VERSION, len(header)), header, struct.pack("<I", len(tensors))]
    parts += [_tensor_bytes(name, arr) for name, arr in tensors]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def _take(data, pos, n, what):
    if pos + n > len(data):
        raise ContainerError(ContainerError.TRUNCATED, f"checkpoint truncated in {what}")
    return data[pos : pos + n], pos + n


def decode_checkpoint(data):
    if len(data) < 4 or data[:4] != MAGIC:
        raise ContainerError(ContainerError.BAD_MAGIC, "not a checkpoint file")
    if len(data) < 13:
        raise ContainerError(ContainerError.TRUNCATED, "checkpoint header truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ContainerError(ContainerError.CHECKSUM, "checkpoint CRC32 mismatch")
    version, hlen = struct.unpack_from("<BI", body, 4)
    if version != VERSION:
        raise ContainerError(ContainerError.VERSION, f"unsupported checkpoint version {version}")
    raw, pos = _take(body, 9, hlen, "header")
    header = json.loads(raw.decode("utf-8"))
    model = ModelConfig(**header["model"])
    meta = header["meta"]
    raw, pos = _take(body, pos, 4, "tensor count")
    (count,) = struct.unpack("<I", raw)
    tensors = {}
    for _ in range(count):
        raw, pos = _take(body, pos, 4, "name length")
        (nlen,) = struct.unpack("<I", raw)
        raw, pos = _take(body, pos, nlen, "name")
        name = raw.decode("utf-8")
        raw, pos = _take(body, pos, 4, "rank")
        (rank,) = struct.unpack("<I", raw)
        raw, pos = _take(body, pos, 4 * rank, "dims")
        dims = struct.unpack(f"<{rank}I", raw)
        n = int(np.prod(dims, dtype=np.int64))
        raw, pos = _take(body, pos, 4 * n, f"tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(body):
        raise ContainerError(ContainerError.SHAPE, f"{len(body) - pos} trailing bytes in checkpoint")

    shapes = param_shapes(model)
    params = {}
    for name, shape in shapes.items():
        if name not in tensors:
            raise ContainerError(ContainerError.SHAPE, f"checkpoint lacks tensor {name}")
        if tensors[name].shape != shape:
            raise ContainerError(
                ContainerError.SHAPE, f"{name}: stored shape {tensors[name].shape}, config expects {shape}"
            )
        params[name] = tensors[name]
    adam = None
    if "adam_step" in meta:
        adam = AdamState(
            int(meta.pop("adam_step")),
            {k: tensors[f"adam.m/{k}"] for k in shapes},
            {k: tensors[f"adam.v/{k}"] for k in shapes},
        )
    return Checkpoint(model, params, meta, adam)


def save_checkpoint(path, ckpt):
    """Write ``ckpt`` to ``path`` atomically; returns the checkpoint id."""
    data = encode_checkpoint(ckpt)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return checkpoint_id(data)


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def checkpoint_id(data):
    """Short content hash used to reference a checkpoint in reports and manifests."""
    return hashlib.sha256(data).hexdigest()[:16]
