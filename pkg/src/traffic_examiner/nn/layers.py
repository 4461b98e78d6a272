"""Feed-forward layers with handwritten backward passes.

All activations carry a leading batch axis: ``[B, C, L]`` for the convolutional
stages and ``[B, features]`` for dense layers. Each forward function returns
``(output, cache)``; the matching ``*_backward`` consumes the upstream gradient
and that cache.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArgumentError, ShapeError

Tensor = npt.NDArray[np.float64]


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Conv1dParams:
    kernels: Tensor  # [out_channels, in_channels, width]
    bias: Tensor  # [out_channels]

    def __post_init__(self) -> None:
        if self.kernels.ndim != 3 or self.kernels.shape[2] < 1:
            raise ShapeError(f"卷积核形状非法: {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError("卷积偏置与输出通道数不一致")

    @classmethod
    def init(cls, rng: np.random.Generator, out_channels: int, in_channels: int, width: int) -> "Conv1dParams":
        kernels = glorot_uniform(
            rng, (out_channels, in_channels, width), in_channels * width, out_channels * width
        )
        return cls(kernels, np.zeros(out_channels))


@dataclass
class DenseParams:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]

    def __post_init__(self) -> None:
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"全连接层参数形状不一致: {self.weight.shape} / {self.bias.shape}")

    @classmethod
    def init(cls, rng: np.random.Generator, in_features: int, out_features: int) -> "DenseParams":
        weight = glorot_uniform(rng, (out_features, in_features), in_features, out_features)
        return cls(weight, np.zeros(out_features))


@dataclass
class _ConvCache:
    cols: Tensor
    input_shape: tuple[int, int, int]
    params: Conv1dParams


def conv1d(x: Tensor, p: Conv1dParams) -> tuple[Tensor, _ConvCache]:
    """Cross-correlation with zero SAME padding; output length equals input length."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d 输入应为 [B, C, L]，实际为 {x.shape}")
    batch, channels, length = x.shape
    out_channels, in_channels, width = p.kernels.shape
    if channels != in_channels:
        raise ShapeError(f"conv1d 输入通道 {channels} 与卷积核通道 {in_channels} 不一致")
    left = (width - 1) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (left, width - 1 - left)))
    cols = sliding_window_view(padded, width, axis=2)  # [B, C, L, W]
    cols = cols.transpose(0, 2, 1, 3).reshape(batch * length, channels * width)
    out = cols @ p.kernels.reshape(out_channels, channels * width).T
    out = out.reshape(batch, length, out_channels).transpose(0, 2, 1) + p.bias[None, :, None]
    return np.ascontiguousarray(out), _ConvCache(cols, (batch, channels, length), p)


def conv1d_backward(dout: Tensor, cache: _ConvCache) -> tuple[Tensor, Conv1dParams]:
    batch, channels, length = cache.input_shape
    out_channels, _, width = cache.params.kernels.shape
    flat = dout.transpose(0, 2, 1).reshape(batch * length, out_channels)
    d_kernels = (flat.T @ cache.cols).reshape(cache.params.kernels.shape)
    d_bias = dout.sum(axis=(0, 2))
    dcols = (flat @ cache.params.kernels.reshape(out_channels, channels * width)).reshape(
        batch, length, channels, width
    )
    d_padded = np.zeros((batch, channels, length + width - 1))
    for w in range(width):
        d_padded[:, :, w : w + length] += dcols[:, :, :, w].transpose(0, 2, 1)
    left = (width - 1) // 2
    dx = d_padded[:, :, left : left + length]
    return np.ascontiguousarray(dx), Conv1dParams(d_kernels, d_bias)


def relu(x: Tensor) -> tuple[Tensor, Tensor]:
    return np.maximum(x, 0.0), x


def relu_backward(dout: Tensor, cache: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    return dout * (cache > 0)


@dataclass
class _PoolCache:
    argmax: npt.NDArray[np.intp]
    input_shape: tuple[int, ...]
    k: int
    stride: int


def maxpool1d(x: Tensor, k: int = 3, stride: int = 3) -> tuple[Tensor, _PoolCache]:
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d 输入应为 [B, C, L]，实际为 {x.shape}")
    length = x.shape[2]
    if length < k:
        raise ShapeError(f"池化输入长度 {length} 小于窗口 {k}")
    n_out = (length - k) // stride + 1
    windows = sliding_window_view(x, k, axis=2)[:, :, ::stride][:, :, :n_out]
    argmax = windows.argmax(axis=3)  # ties resolve to the first index
    out = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]
    return np.ascontiguousarray(out), _PoolCache(argmax, x.shape, k, stride)


def maxpool1d_backward(dout: Tensor, cache: _PoolCache) -> Tensor:
    dx = np.zeros(cache.input_shape)
    starts = np.arange(dout.shape[2]) * cache.stride
    for j in range(cache.k):
        dx[:, :, starts + j] += np.where(cache.argmax == j, dout, 0.0)
    return dx


def pooled_length(length: int, k: int = 3, stride: int = 3) -> int:
    return (length - k) // stride + 1


def _channel_window_sum(a: Tensor, n: int) -> Tensor:
    half = n // 2
    channels = a.shape[1]
    total = np.zeros_like(a)
    for shift in range(-half, half + 1):
        lo, hi = max(0, -shift), min(channels, channels - shift)
        if lo < hi:
            total[:, lo:hi] += a[:, lo + shift : hi + shift]
    return total


@dataclass
class _LrnCache:
    x: Tensor
    scale: Tensor
    n: int
    alpha: float
    beta: float


def lrn(x: Tensor, k: float = 2.0, n: int = 5, alpha: float = 1e-4, beta: float = 0.75) -> tuple[Tensor, _LrnCache]:
    """Across-channel local response normalization, window clipped at the edges."""
    if n < 1 or n % 2 == 0 or k <= 0:
        raise ArgumentError(f"LRN 参数非法: k={k}, n={n}")
    scale = k + alpha * _channel_window_sum(x * x, n)
    return x * scale ** (-beta), _LrnCache(x, scale, n, alpha, beta)


def lrn_backward(dout: Tensor, cache: _LrnCache) -> Tensor:
    x, scale, beta = cache.x, cache.scale, cache.beta
    inner = _channel_window_sum(dout * x * scale ** (-beta - 1.0), cache.n)
    return dout * scale ** (-beta) - 2.0 * cache.alpha * beta * x * inner


def dense(x: Tensor, p: DenseParams) -> tuple[Tensor, tuple[Tensor, DenseParams]]:
    if x.ndim != 2 or x.shape[1] != p.weight.shape[1]:
        raise ShapeError(f"全连接层输入 {x.shape} 与权重 {p.weight.shape} 不匹配")
    return x @ p.weight.T + p.bias, (x, p)


def dense_backward(dout: Tensor, cache: tuple[Tensor, DenseParams]) -> tuple[Tensor, DenseParams]:
    x, p = cache
    return dout @ p.weight, DenseParams(dout.T @ x, dout.sum(axis=0))


def dropout(
    x: Tensor,
    p: float,
    rng: Optional[np.random.Generator],
    training: bool,
) -> tuple[Tensor, Optional[Tensor]]:
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)`` at training time."""
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout 概率必须位于 [0, 1)，当前为 {p}")
    if not training or p == 0.0:
        return x, None
    if rng is None:
        raise ArgumentError("训练模式下的 dropout 需要随机数发生器")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dout: Tensor, mask: Optional[Tensor]) -> Tensor:
    return dout if mask is None else dout * mask
