"""Adam updates for named parameter sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns fresh parameter arrays.

    Parameters missing from ``grads`` are treated as having zero gradient
    (their moments still decay).
    """
    if lr <= 0:
        raise ValueError("adam_step: lr must be positive")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(
                f"adam_step: gradient shape {g.shape} does not match parameter "
                f"shape {p.shape} for {name!r}")
        if np.isnan(g).any():
            raise FloatingPointError(f"adam_step: NaN gradient for parameter {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        out[name] = p - lr * mhat / (np.sqrt(vhat) + state.eps)
    return out
