"""The conv + stacked-LSTM next-frame predictor, written directly in numpy.

Parameters live in an ordered ``dict`` of arrays using torch-style names
(``conv1.weight``, ``lstm.weight_ih_l0``, ``fc.bias`` ...).  All kernels run
in the dtype of the parameters, so the same code serves float32 training
and float64 gradient checks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import NonFiniteError
from . import layers


@dataclass(frozen=True)
class ModelConfig:
    fields: int = 7
    height: int = 60
    width: int = 60
    window: int = 5
    conv1_out: int = 64
    conv2_out: int = 128
    kernel: int = 3
    lstm_hidden: int = 512
    lstm_layers: int = 4

    def __post_init__(self):
        counts = asdict(self)
        if any(v < 1 for v in counts.values()):
            raise ValueError(f"all model sizes must be >= 1: {counts}")
        if self.height % 4 or self.width % 4:
            raise ValueError("height and width must be divisible by 4 (two 2x2 pools)")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd for same-size padding")

    @property
    def feature_shape(self):
        return (self.conv2_out, self.height // 4, self.width // 4)

    @property
    def feature_size(self):
        c, h, w = self.feature_shape
        return c * h * w

    @property
    def frame_size(self):
        return self.fields * self.height * self.width

    def to_dict(self):
        return asdict(self)


def param_shapes(cfg):
    k = cfg.kernel
    h = cfg.lstm_hidden
    shapes = {
        "conv1.weight": (cfg.conv1_out, cfg.fields, k, k),
        "conv1.bias": (cfg.conv1_out,),
        "conv2.weight": (cfg.conv2_out, cfg.conv1_out, k, k),
        "conv2.bias": (cfg.conv2_out,),
    }
    for layer in range(cfg.lstm_layers):
        n_in = cfg.feature_size if layer == 0 else h
        shapes[f"lstm.weight_ih_l{layer}"] = (4 * h, n_in)
        shapes[f"lstm.weight_hh_l{layer}"] = (4 * h, h)
        shapes[f"lstm.bias_ih_l{layer}"] = (4 * h,)
        shapes[f"lstm.bias_hh_l{layer}"] = (4 * h,)
    shapes["fc.weight"] = (cfg.frame_size, h)
    shapes["fc.bias"] = (cfg.frame_size,)
    return shapes


def fan_in(name, cfg):
    k = cfg.kernel
    if name.startswith("conv1"):
        return cfg.fields * k * k
    if name.startswith("conv2"):
        return cfg.conv1_out * k * k
    if name.startswith("lstm.weight_ih_l0"):
        return cfg.feature_size
    return cfg.lstm_hidden


def param_breakdown(cfg):
    """Trainable parameter count per layer (conv1, conv2, lstm_l*, fc)."""
    out = {}
    for name, shape in param_shapes(cfg).items():
        layer = name.split(".")[0]
        if layer == "lstm":
            layer = "lstm_l" + name.rsplit("_l", 1)[1]
        out[layer] = out.get(layer, 0) + int(np.prod(shape))
    return out


def param_count(cfg):
    return sum(param_breakdown(cfg).values())


def init_params(cfg, seed, dtype=np.float32):
    """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` draws, one stream per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        bound = 1.0 / np.sqrt(fan_in(name, cfg))
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def cast_params(params, dtype):
    return {k: v.astype(dtype) for k, v in params.items()}


def _check_input(windows, cfg):
    want = (cfg.fields, cfg.height, cfg.width)
    if windows.ndim != 5 or windows.shape[2:] != want:
        raise ValueError(f"expected input (B, T, {want[0]}, {want[1]}, {want[2]}), got {windows.shape}")


def conv_features(images, params):
    """conv -> ReLU -> pool, twice.  ``images`` is ``(N, F, H, W)``; returns ``(N, C2, H/4, W/4)``."""
    x = np.ascontiguousarray(images.transpose(0, 2, 3, 1))
    feats, _ = _conv_block(x, params)
    return feats.transpose(0, 3, 1, 2)


def _conv_block(x, params):
    z1, cols1 = layers.conv_forward(x, params["conv1.weight"], params["conv1.bias"])
    a1 = np.maximum(z1, 0, out=z1)
    p1 = layers.maxpool_forward(a1)
    z2, cols2 = layers.conv_forward(p1, params["conv2.weight"], params["conv2.bias"])
    a2 = np.maximum(z2, 0, out=z2)
    p2 = layers.maxpool_forward(a2)
    cache = (x.shape, cols1, a1, p1, cols2, a2, p2)
    return p2, cache


def conv_block(frame, params, cfg=None):
    """Feature map of one ``(F, H, W)`` frame: ``(C2, H/4, W/4)``."""
    frame = np.asarray(frame)
    if cfg is not None and frame.shape != (cfg.fields, cfg.height, cfg.width):
        raise ValueError(f"frame shape {frame.shape} does not match config")
    if frame.ndim != 3 or frame.shape[0] != params["conv1.weight"].shape[1]:
        raise ValueError(f"frame shape {frame.shape} does not match conv1 input channels")
    return conv_features(frame[None].astype(params["conv1.weight"].dtype), params)[0]


def lstm_stack(features, params, n_layers):
    """Run the stacked LSTM over ``(B, T, in)``; returns top-layer hidden states and caches."""
    xs = features
    caches = []
    for layer in range(n_layers):
        xs, cache = layers.lstm_layer_forward(
            xs,
            params[f"lstm.weight_ih_l{layer}"],
            params[f"lstm.weight_hh_l{layer}"],
            params[f"lstm.bias_ih_l{layer}"],
            params[f"lstm.bias_hh_l{layer}"],
        )
        caches.append(cache)
    return xs, caches


def lstm_forward(features, params, n_layers):
    """Final-timestep hidden state of the top layer for ``(T, in)`` or ``(B, T, in)`` input."""
    feats = np.asarray(features)
    single = feats.ndim == 2
    if single:
        feats = feats[None]
    hs, _ = lstm_stack(feats, params, n_layers)
    out = hs[:, -1]
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite LSTM activation")
    return out[0] if single else out


def forward(windows, params, cfg, keep_cache=False):
    """Predict the next frame for each window.

    ``windows`` is ``(B, T, F, H, W)`` of normalized frames; returns
    ``(B, F, H, W)`` (no output activation) and, if requested, the cache for
    :func:`backward`.
    """
    windows = np.asarray(windows)
    _check_input(windows, cfg)
    bsz, steps = windows.shape[:2]
    frames = windows.reshape(bsz * steps, cfg.fields, cfg.height, cfg.width)
    index = np.arange(bsz * steps).reshape(bsz, steps)
    return forward_indexed(frames, index, params, cfg, keep_cache)


def forward_indexed(frames, index, params, cfg, keep_cache=False):
    """Like :func:`forward` with windows given as ``frames[index]``.

    ``frames`` is ``(N, F, H, W)`` and ``index`` an integer ``(B, T)`` array.
    Overlapping windows share frames, so the conv stack runs once per
    distinct frame; the result equals ``forward(frames[index])``.
    """
    dtype = params["fc.weight"].dtype
    frames = np.asarray(frames)
    index = np.asarray(index)
    if index.ndim != 2:
        raise ValueError(f"index must be (B, T), got shape {index.shape}")
    _check_input(frames[None], cfg)
    bsz, steps = index.shape
    x = np.ascontiguousarray(frames.transpose(0, 2, 3, 1), dtype=dtype)
    pooled, conv_cache = _conv_block(x, params)
    # flatten in (C, H, W) order
    flat = pooled.transpose(0, 3, 1, 2).reshape(len(frames), cfg.feature_size)
    feats = flat[index]
    hs, lstm_caches = lstm_stack(feats, params, cfg.lstm_layers)
    h_last = hs[:, -1]
    if not np.all(np.isfinite(h_last)):
        raise NonFiniteError("non-finite LSTM activation")
    out = h_last @ params["fc.weight"].T + params["fc.bias"]
    pred = out.reshape(bsz, cfg.fields, cfg.height, cfg.width)
    if not keep_cache:
        return pred
    cache = (index, pooled.shape, conv_cache, lstm_caches, h_last)
    return pred, cache


def _scatter_rows(rows, index, n):
    """Sum ``rows`` (one per entry of ``index``) into ``n`` output rows."""
    flat = index.ravel()
    if flat.size == n and np.array_equal(flat, np.arange(n)):
        return rows
    onehot = np.zeros((n, flat.size), dtype=rows.dtype)
    onehot[flat, np.arange(flat.size)] = 1.0
    return onehot @ rows


def predict(window, params, cfg):
    """Single window ``(T, F, H, W)`` -> ``(1, F, H, W)``."""
    return forward(np.asarray(window)[None], params, cfg)


def mse_loss(pred, target):
    """Mean squared difference over every entry, accumulated in float64."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(diff * diff))


def backward(pred, target, params, cfg, cache):
    """Gradients of ``mse_loss(pred, target)`` with respect to every parameter."""
    index, pooled_shape, conv_cache, lstm_caches, h_last = cache
    bsz, steps = index.shape
    dtype = params["fc.weight"].dtype
    dpred = (2.0 / pred.size) * (pred.astype(dtype) - np.asarray(target, dtype=dtype))
    dout = dpred.reshape(bsz, -1)
    grads = {
        "fc.weight": dout.T @ h_last,
        "fc.bias": dout.sum(axis=0),
    }
    dh_top = np.zeros((bsz, steps, cfg.lstm_hidden), dtype=dtype)
    dh_top[:, -1] = dout @ params["fc.weight"]

    dxs = dh_top
    for layer in reversed(range(cfg.lstm_layers)):
        dxs, dw_ih, dw_hh, db = layers.lstm_layer_backward(
            dxs,
            lstm_caches[layer],
            params[f"lstm.weight_ih_l{layer}"],
            params[f"lstm.weight_hh_l{layer}"],
        )
        grads[f"lstm.weight_ih_l{layer}"] = dw_ih
        grads[f"lstm.weight_hh_l{layer}"] = dw_hh
        grads[f"lstm.bias_ih_l{layer}"] = db
        grads[f"lstm.bias_hh_l{layer}"] = db.copy()

    n, hp, wp, c2 = pooled_shape
    dflat = _scatter_rows(dxs.reshape(bsz * steps, -1), index, n)
    dpooled = dflat.reshape(n, c2, hp, wp).transpose(0, 2, 3, 1)
    x_shape, cols1, a1, p1, cols2, a2, p2 = conv_cache
    da2 = layers.maxpool_backward(dpooled, a2, p2)
    dz2 = da2 * (a2 > 0)
    dp1, grads["conv2.weight"], grads["conv2.bias"] = layers.conv_backward(
        dz2, cols2, p1.shape, params["conv2.weight"]
    )
    da1 = layers.maxpool_backward(dp1, a1, p1)
    dz1 = da1 * (a1 > 0)
    _, grads["conv1.weight"], grads["conv1.bias"] = layers.conv_backward(
        dz1, cols1, x_shape, params["conv1.weight"], need_dx=False
    )
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    return {name: grads[name].astype(dtype, copy=False) for name in params}


def loss_and_grads(windows, targets, params, cfg):
    pred, cache = forward(windows, params, cfg, keep_cache=True)
    loss = mse_loss(pred, targets)
    return loss, backward(pred, targets, params, cfg, cache)


def loss_and_grads_indexed(frames, index, targets, params, cfg):
    pred, cache = forward_indexed(frames, index, params, cfg, keep_cache=True)
    loss = mse_loss(pred, targets)
    return loss, backward(pred, targets, params, cfg, cache)
