from __future__ import annotations

from collections.abc import Mapping

import numpy as np
import numpy.typing as npt

from ..errors import ArgumentError
from .layers import Tensor

PROB_FLOOR = 1e-12


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the max so large logits cannot overflow."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _check_labels(probs: Tensor, labels: npt.ArrayLike) -> npt.NDArray[np.intp]:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ArgumentError(f"标签数量与概率矩阵 {probs.shape} 不一致")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ArgumentError(f"标签越界：类别数为 {probs.shape[1]}")
    return labels


def cross_entropy(probs: Tensor, labels: npt.ArrayLike) -> float:
    """Mean of ``-log(p[label])`` over the batch, probabilities clamped at 1e-12."""
    probs = np.atleast_2d(probs)
    labels = _check_labels(probs, labels)
    picked = probs[np.arange(labels.size), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def softmax_cross_entropy_backward(probs: Tensor, labels: npt.ArrayLike) -> Tensor:
    """Gradient of the mean loss with respect to the logits: ``(probs - onehot) / B``."""
    probs = np.atleast_2d(probs)
    labels = _check_labels(probs, labels)
    grad = probs.copy()
    grad[np.arange(labels.size), labels] -= 1.0
    return grad / labels.size


def l1_penalty(weights: Mapping[str, Tensor], lam: float) -> tuple[float, dict[str, Tensor]]:
    """``lam * sum|w|`` and its subgradient (``sign(0) == 0``). Pass weights only, not biases."""
    if lam < 0:
        raise ArgumentError("L1 系数不能为负")
    loss = lam * sum(float(np.abs(w).sum()) for w in weights.values())
    return loss, {name: lam * np.sign(w) for name, w in weights.items()}
