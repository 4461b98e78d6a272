"""Stacked LSTM without peepholes, gate order input/forget/cell/output."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeError
from .layers import Tensor, dropout, dropout_backward, glorot_uniform

GATES = ("input", "forget", "cell", "output")


def sigmoid(z: Tensor) -> Tensor:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmParams:
    """Gate weights stacked along the first axis in ``GATES`` order."""

    W: Tensor  # [4H, in]
    U: Tensor  # [4H, H]
    b: Tensor  # [4H]

    def __post_init__(self) -> None:
        four_h = self.U.shape[0]
        if four_h % 4 or self.U.shape != (four_h, four_h // 4) or self.W.shape[0] != four_h or self.b.shape != (four_h,):
            raise ShapeError(f"LSTM 参数形状不一致: W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str) -> tuple[Tensor, Tensor, Tensor]:
        h = self.hidden
        i = GATES.index(name)
        return self.W[i * h : (i + 1) * h], self.U[i * h : (i + 1) * h], self.b[i * h : (i + 1) * h]

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden: int) -> "LstmParams":
        W = np.concatenate([glorot_uniform(rng, (hidden, input_size), input_size, hidden) for _ in GATES])
        U = np.concatenate([glorot_uniform(rng, (hidden, hidden), hidden, hidden) for _ in GATES])
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0  # forget gate
        return cls(W, U, b)

    @classmethod
    def zeros_like(cls, other: "LstmParams") -> "LstmParams":
        return cls(np.zeros_like(other.W), np.zeros_like(other.U), np.zeros_like(other.b))


@dataclass
class _StepCache:
    x: Tensor
    h: Tensor
    c: Tensor
    i: Tensor
    f: Tensor
    g: Tensor
    o: Tensor
    tanh_c: Tensor
    params: LstmParams


def lstm_step(x: Tensor, h: Tensor, c: Tensor, p: LstmParams) -> tuple[Tensor, Tensor, _StepCache]:
    """One time step for a batch: ``x [B, in]``, ``h, c [B, H]``."""
    if x.ndim != 2 or x.shape[1] != p.input_size or h.shape != (x.shape[0], p.hidden) or c.shape != h.shape:
        raise ShapeError(f"lstm_step 维度不匹配: x{x.shape} h{h.shape} c{c.shape}")
    H = p.hidden
    z = x @ p.W.T + h @ p.U.T + p.b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c_next = f * c + i * g
    tanh_c = np.tanh(c_next)
    h_next = o * tanh_c
    return h_next, c_next, _StepCache(x, h, c, i, f, g, o, tanh_c, p)


def lstm_step_backward(
    dh_next: Tensor, dc_next: Tensor, cache: _StepCache
) -> tuple[Tensor, Tensor, Tensor, LstmParams]:
    """Returns ``(dx, dh_prev, dc_prev, grads)``."""
    s = cache
    do = dh_next * s.tanh_c
    dc = dc_next + dh_next * s.o * (1.0 - s.tanh_c**2)
    di = dc * s.g
    dg = dc * s.i
    df = dc * s.c
    dz = np.concatenate(
        [di * s.i * (1.0 - s.i), df * s.f * (1.0 - s.f), dg * (1.0 - s.g**2), do * s.o * (1.0 - s.o)],
        axis=1,
    )
    grads = LstmParams(dz.T @ s.x, dz.T @ s.h, dz.sum(axis=0))
    return dz @ s.params.W, dz @ s.params.U, dc * s.f, grads


@dataclass
class _SequenceCache:
    steps: list[list[_StepCache]] = field(default_factory=list)
    masks: list[Optional[Tensor]] = field(default_factory=list)
    input_shape: tuple[int, ...] = ()


def lstm_sequence(
    X: Tensor,
    layers: Sequence[LstmParams],
    dropout_p: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> tuple[Tensor, _SequenceCache]:
    """Run ``X [B, T, F]`` through the stack; returns the top layer's last hidden state.

    Dropout is applied to each layer's output sequence only, never to the
    recurrent connections.
    """
    if X.ndim != 3:
        raise ShapeError(f"lstm_sequence 输入应为 [B, T, F]，实际为 {X.shape}")
    batch, steps, _ = X.shape
    cache = _SequenceCache(input_shape=X.shape)
    seq = X
    for layer in layers:
        if seq.shape[2] != layer.input_size:
            raise ShapeError(f"LSTM 层输入维度 {layer.input_size} 与序列特征 {seq.shape[2]} 不一致")
        h = np.zeros((batch, layer.hidden))
        c = np.zeros((batch, layer.hidden))
        outputs = np.empty((batch, steps, layer.hidden))
        step_caches = []
        for t in range(steps):
            h, c, step = lstm_step(seq[:, t], h, c, layer)
            outputs[:, t] = h
            step_caches.append(step)
        seq, mask = dropout(outputs, dropout_p, rng, training)
        cache.steps.append(step_caches)
        cache.masks.append(mask)
    return seq[:, -1], cache


def lstm_sequence_backward(dout: Tensor, cache: _SequenceCache) -> tuple[Tensor, list[LstmParams]]:
    batch, steps, _ = cache.input_shape
    grads: list[LstmParams] = []
    d_seq = np.zeros((batch, steps, dout.shape[1]))
    d_seq[:, -1] = dout
    for step_caches, mask in zip(reversed(cache.steps), reversed(cache.masks)):
        d_seq = dropout_backward(d_seq, mask)
        params = step_caches[0].params
        total = LstmParams.zeros_like(params)
        d_input = np.zeros((batch, steps, params.input_size))
        dh = np.zeros((batch, params.hidden))
        dc = np.zeros((batch, params.hidden))
        for t in reversed(range(steps)):
            dx, dh, dc, g = lstm_step_backward(d_seq[:, t] + dh, dc, step_caches[t])
            d_input[:, t] = dx
            total.W += g.W
            total.U += g.U
            total.b += g.b
        grads.append(total)
        d_seq = d_input
    grads.reverse()
    return d_seq, grads
