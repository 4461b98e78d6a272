from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, ShapeError
from .layers import Tensor


@dataclass
class AdamState:
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if lr <= 0:
        raise ArgumentError("学习率必须为正数")
    if params.keys() != grads.keys():
        raise ShapeError(f"参数与梯度名称不一致: {sorted(params.keys() ^ grads.keys())}")
    for name, value in params.items():
        if grads[name].shape != value.shape:
            raise ShapeError(f"{name}: 梯度形状 {grads[name].shape} 与参数 {value.shape} 不一致")

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, value in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        value -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
