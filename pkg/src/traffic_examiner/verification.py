"""Finite-difference checks for every differentiable op of the reference path.

Each case builds random float64 inputs from a generator and a scalar
objective ``sum(op(inputs) * R)`` for a fixed random ``R``, so the analytic
upstream gradient is just ``R``.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import DEFAULT_SEED, Hyperparams, LrnConfig
from .errors import VerificationError
from .model import Architecture, build, loss
from .nn import (
    Conv1dParams,
    DenseParams,
    LstmParams,
    Tensor,
    conv1d,
    conv1d_backward,
    cross_entropy,
    dense,
    dense_backward,
    dropout,
    dropout_backward,
    grad_check,
    l1_penalty,
    lrn,
    lrn_backward,
    lstm_sequence,
    lstm_sequence_backward,
    lstm_step,
    lstm_step_backward,
    maxpool1d,
    maxpool1d_backward,
    relu,
    relu_backward,
    softmax,
    softmax_cross_entropy_backward,
)
from .nn.gradcheck import ScalarOp

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
DEFAULT_SEEDS = 20

# Small enough to check densely, deep enough to cover every stage.
SMALL_ARCHITECTURE = Architecture(
    input_len=27,
    conv1_filters=3,
    conv2_filters=4,
    kernel_width=5,
    pool_size=3,
    pool_stride=3,
    dense_units=8,
    timesteps=4,
    lstm_hidden=5,
    lstm_layers=2,
)

Builder = Callable[[np.random.Generator], tuple[ScalarOp, dict[str, Tensor]]]


@dataclass(frozen=True)
class GradCheckCase:
    name: str
    build: Builder
    max_coords: Optional[int] = None
    min_magnitude: float = 0.0


@dataclass(frozen=True)
class CaseResult:
    name: str
    max_error: float
    seeds: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _weighted(out: Tensor, r: Tensor) -> float:
    return float(np.sum(out * r))


def _conv1d_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    inputs = {
        "x": rng.standard_normal((2, 2, 9)),
        "kernels": rng.standard_normal((3, 2, 5)),
        "bias": rng.standard_normal(3),
    }
    r = rng.standard_normal((2, 3, 9))

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        out, cache = conv1d(a["x"], Conv1dParams(a["kernels"], a["bias"]))
        dx, g = conv1d_backward(r, cache)
        return _weighted(out, r), {"x": dx, "kernels": g.kernels, "bias": g.bias}

    return op, inputs


def _relu_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    # magnitudes kept well away from the kink at 0
    x = rng.choice([-1.0, 1.0], size=(3, 4, 6)) * rng.uniform(0.1, 1.0, size=(3, 4, 6))
    r = rng.standard_normal(x.shape)

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        out, cache = relu(a["x"])
        return _weighted(out, r), {"x": relu_backward(r, cache)}

    return op, {"x": x}


def _maxpool_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    # distinct values 0.01 apart: no ties within eps
    x = (rng.permutation(2 * 3 * 12).reshape(2, 3, 12) * 0.01).astype(np.float64)
    r = rng.standard_normal((2, 3, 4))

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        out, cache = maxpool1d(a["x"], 3, 3)
        return _weighted(out, r), {"x": maxpool1d_backward(r, cache)}

    return op, {"x": x}


def _lrn_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    # strong alpha so the normalisation term is actually exercised
    x = rng.standard_normal((2, 6, 5))
    r = rng.standard_normal(x.shape)

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        out, cache = lrn(a["x"], k=2.0, n=5, alpha=0.3, beta=0.75)
        return _weighted(out, r), {"x": lrn_backward(r, cache)}

    return op, {"x": x}


def _dense_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    inputs = {
        "x": rng.standard_normal((4, 7)),
        "weight": rng.standard_normal((5, 7)),
        "bias": rng.standard_normal(5),
    }
    r = rng.standard_normal((4, 5))

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        out, cache = dense(a["x"], DenseParams(a["weight"], a["bias"]))
        dx, g = dense_backward(r, cache)
        return _weighted(out, r), {"x": dx, "weight": g.weight, "bias": g.bias}

    return op, inputs


def _dropout_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    x = rng.standard_normal((4, 10))
    r = rng.standard_normal(x.shape)
    mask_seed = int(rng.integers(2**31))

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        # same generator state on every call, so the mask is fixed
        out, mask = dropout(a["x"], 0.4, np.random.default_rng(mask_seed), True)
        return _weighted(out, r), {"x": dropout_backward(r, mask)}

    return op, {"x": x}


def _lstm_step_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    batch, in_size, hidden = 2, 3, 4
    p = LstmParams.init(rng, in_size, hidden)
    inputs = {
        "x": rng.standard_normal((batch, in_size)),
        "h": rng.standard_normal((batch, hidden)),
        "c": rng.standard_normal((batch, hidden)),
        "W": p.W,
        "U": p.U,
        "b": p.b + 0.1 * rng.standard_normal(p.b.shape),
    }
    rh = rng.standard_normal((batch, hidden))
    rc = rng.standard_normal((batch, hidden))

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        h, c, cache = lstm_step(a["x"], a["h"], a["c"], LstmParams(a["W"], a["U"], a["b"]))
        dx, dh, dc, g = lstm_step_backward(rh, rc, cache)
        value = _weighted(h, rh) + _weighted(c, rc)
        return value, {"x": dx, "h": dh, "c": dc, "W": g.W, "U": g.U, "b": g.b}

    return op, inputs


def _lstm_sequence_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    batch, steps, features, hidden = 2, 4, 3, 4
    layers = [LstmParams.init(rng, features, hidden), LstmParams.init(rng, hidden, hidden)]
    inputs = {"X": rng.standard_normal((batch, steps, features))}
    for i, layer in enumerate(layers):
        inputs[f"{i}.W"], inputs[f"{i}.U"], inputs[f"{i}.b"] = layer.W, layer.U, layer.b
    r = rng.standard_normal((batch, hidden))
    mask_seed = int(rng.integers(2**31))

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        stack = [LstmParams(a[f"{i}.W"], a[f"{i}.U"], a[f"{i}.b"]) for i in range(len(layers))]
        out, cache = lstm_sequence(a["X"], stack, 0.25, np.random.default_rng(mask_seed), True)
        dX, grads = lstm_sequence_backward(r, cache)
        result = {"X": dX}
        for i, g in enumerate(grads):
            result[f"{i}.W"], result[f"{i}.U"], result[f"{i}.b"] = g.W, g.U, g.b
        return _weighted(out, r), result

    return op, inputs


def _softmax_ce_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    logits = 2.0 * rng.standard_normal((4, 5))
    labels = rng.integers(0, 5, size=4)

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        probs = softmax(a["logits"])
        return cross_entropy(probs, labels), {"logits": softmax_cross_entropy_backward(probs, labels)}

    return op, {"logits": logits}


def _l1_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    inputs = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(5)}

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        return l1_penalty(a, 0.05)

    return op, inputs


def _model_loss_case(rng: np.random.Generator) -> tuple[ScalarOp, dict[str, Tensor]]:
    m = build(3, int(rng.integers(2**31)), SMALL_ARCHITECTURE, LrnConfig(k=2.0, n=3, alpha=0.1, beta=0.75))
    batch = rng.uniform(0.0, 1.0, size=(3, SMALL_ARCHITECTURE.input_len))
    labels = rng.integers(0, 3, size=3)
    hp = Hyperparams(dropout=0.0, lambda_conv=0.001, lambda_lstm=0.0005)
    params = m.named_arrays()

    def op(a: dict[str, Tensor]) -> tuple[float, dict[str, Tensor]]:
        # ``a`` aliases the model's storage, perturbations reach the forward pass
        return loss(m, batch, labels, hp)

    return op, params


GRADCHECK_CASES: dict[str, GradCheckCase] = {
    case.name: case
    for case in (
        GradCheckCase("conv1d", _conv1d_case),
        GradCheckCase("relu", _relu_case),
        GradCheckCase("maxpool1d", _maxpool_case),
        GradCheckCase("lrn", _lrn_case, min_magnitude=1e-5),
        GradCheckCase("dense", _dense_case),
        GradCheckCase("dropout", _dropout_case),
        GradCheckCase("lstm_step", _lstm_step_case, min_magnitude=1e-5),
        GradCheckCase("lstm_sequence", _lstm_sequence_case, max_coords=120, min_magnitude=1e-5),
        GradCheckCase("softmax_cross_entropy", _softmax_ce_case, min_magnitude=1e-5),
        GradCheckCase("l1_penalty", _l1_case),
        GradCheckCase("model_loss", _model_loss_case, max_coords=40, min_magnitude=1e-5),
    )
}


def check_case(case: GradCheckCase, seed: int = DEFAULT_SEED, seeds: int = DEFAULT_SEEDS) -> CaseResult:
    worst = 0.0
    for s in range(seeds):
        rng = np.random.default_rng([seed, s])
        op, inputs = case.build(rng)
        error = grad_check(op, inputs, max_coords=case.max_coords, rng=rng, min_magnitude=case.min_magnitude)
        worst = max(worst, error)
    logger.debug("%s: max relative error %.3e over %d seeds", case.name, worst, seeds)
    return CaseResult(case.name, worst, seeds)


def run_suite(
    seed: int = DEFAULT_SEED,
    seeds: int = DEFAULT_SEEDS,
    cases: Optional[Mapping[str, GradCheckCase]] = None,
) -> list[CaseResult]:
    cases = GRADCHECK_CASES if cases is None else cases
    return [check_case(case, seed, seeds) for case in cases.values()]


def require_passing(results: list[CaseResult]) -> None:
    failed = [r for r in results if not r.passed]
    if failed:
        names = ", ".join(f"{r.name} ({r.max_error:.3e})" for r in failed)
        raise VerificationError(f"梯度校验未通过: {names}")
