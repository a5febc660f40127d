import numpy as np
import pytest

from mstm.errors import ContainerError
from mstm.nn.adam import AdamState
from mstm.nn.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from mstm.nn.model import ModelConfig, init_params

CFG = ModelConfig(fields=2, height=8, width=8, conv1_out=3, conv2_out=4, lstm_hidden=4, lstm_layers=2)


def make_ckpt(with_adam=True):
    params = init_params(CFG, 0)
    adam = AdamState(7, {k: v * 0.5 for k, v in params.items()}, {k: v * v for k, v in params.items()})
    return Checkpoint(CFG, params, {"epoch": 3, "norm_stats_sha256": "ab" * 32}, adam if with_adam else None)


@pytest.mark.parametrize("with_adam", [True, False])
def test_roundtrip(tmp_path, with_adam):
    ckpt = make_ckpt(with_adam)
    ident = save_checkpoint(tmp_path / "m.mstw", ckpt)
    back = load_checkpoint(tmp_path / "m.mstw")
    assert len(ident) == 16
    assert back.model == CFG
    assert back.epoch == 3 and back.stats_sha256 == "ab" * 32
    for k, v in ckpt.params.items():
        assert np.array_equal(back.params[k], v)
    if with_adam:
        assert back.adam.step == 7
        assert all(np.array_equal(back.adam.m[k], ckpt.adam.m[k]) for k in ckpt.params)
    else:
        assert back.adam is None


def test_encoding_is_deterministic():
    assert encode_checkpoint(make_ckpt()) == encode_checkpoint(make_ckpt())


@pytest.mark.parametrize(
    "mutate, code",
    [
        (lambda d: b"NOPE" + d[4:], ContainerError.BAD_MAGIC),
        (lambda d: d[:100] + bytes([d[100] ^ 1]) + d[101:], ContainerError.CHECKSUM),
        (lambda d: d[:8], ContainerError.TRUNCATED),
    ],
)
def test_corruption_detected(mutate, code):
    data = encode_checkpoint(make_ckpt())
    with pytest.raises(ContainerError) as exc:
        decode_checkpoint(mutate(data))
    assert exc.value.code == code
