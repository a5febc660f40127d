"""Adam with bias correction over a dict of parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params):
        return cls(
            0,
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )


BLOCK = 1 << 16  # elements per cache-sized slab


def _check(params, grads):
    if set(grads) != set(params):
        raise KeyError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ValueError(f"gradient shape {grads[name].shape} != parameter shape {p.shape} for {name}")


def _update(p, g, m, v, lr, beta1, beta2, eps, corr1, corr2):
    """In-place Adam update of flat ``p``, ``m``, ``v`` one slab at a time.

    Running every elementwise op on a slab that fits in cache touches main
    memory once per array instead of once per op.
    """
    dt = p.dtype.type
    b1, c1 = dt(beta1), dt(1.0 - beta1)
    b2, c2 = dt(beta2), dt(1.0 - beta2)
    step_scale, root_scale, eps = dt(lr / corr1), dt(1.0 / np.sqrt(corr2)), dt(eps)
    n = p.size
    tmp = np.empty(min(n, BLOCK), p.dtype)
    upd = np.empty_like(tmp)
    for lo in range(0, n, BLOCK):
        hi = min(lo + BLOCK, n)
        ps, gs, ms, vs = p[lo:hi], g[lo:hi], m[lo:hi], v[lo:hi]
        x, y = tmp[: hi - lo], upd[: hi - lo]
        ms *= b1
        np.multiply(gs, c1, out=x)
        ms += x
        np.multiply(gs, gs, out=x)
        x *= c2
        vs *= b2
        vs += x
        # lr * m_hat / (sqrt(v_hat) + eps)
        np.sqrt(vs, out=x)
        x *= root_scale
        x += eps
        np.multiply(ms, step_scale, out=y)
        y /= x
        ps -= y


def adam_update(params, grads, state, lr=5e-4, beta1=BETA1, beta2=BETA2, eps=EPS):
    """One Adam update applied in place to ``params`` and ``state``; returns ``state``."""
    _check(params, grads)
    if not state.m:
        fresh = AdamState.zeros_like(params)
        state.m, state.v = fresh.m, fresh.v
    state.step += 1
    corr1 = 1.0 - beta1**state.step
    corr2 = 1.0 - beta2**state.step
    for name, p in params.items():
        if not (p.flags.c_contiguous and state.m[name].flags.c_contiguous and state.v[name].flags.c_contiguous):
            raise ValueError(f"{name}: in-place update needs contiguous arrays")
        g = np.ascontiguousarray(grads[name], dtype=p.dtype).reshape(-1)
        _update(p.reshape(-1), g, state.m[name].reshape(-1), state.v[name].reshape(-1),
                lr, beta1, beta2, eps, corr1, corr2)
    return state


def adam_step(params, grads, state, lr=5e-4, beta1=BETA1, beta2=BETA2, eps=EPS):
    """One Adam update.  Returns new ``(params, state)``; inputs are not modified."""
    _check(params, grads)
    new_params = {k: np.array(p, copy=True) for k, p in params.items()}
    new_state = AdamState(
        state.step,
        {k: np.array(a, dtype=params[k].dtype, copy=True) for k, a in state.m.items()},
        {k: np.array(a, dtype=params[k].dtype, copy=True) for k, a in state.v.items()},
    )
    adam_update(new_params, grads, new_state, lr, beta1, beta2, eps)
    return new_params, new_state
