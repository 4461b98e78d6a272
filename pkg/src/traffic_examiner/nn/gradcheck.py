from __future__ import annotations

from collections.abc import Callable
from typing import Optional

import numpy as np

from .layers import Tensor

ScalarOp = Callable[[dict[str, Tensor]], tuple[float, dict[str, Tensor]]]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    op: ScalarOp,
    inputs: dict[str, Tensor],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    min_magnitude: float = 0.0,
) -> float:
    """Max relative error between ``op``'s analytic gradients and central differences.

    ``op`` maps named arrays to ``(scalar, gradients)``. With ``max_coords`` set,
    that many coordinates are sampled uniformly over all inputs instead of
    checking every coordinate. Coordinates whose analytic gradient is smaller
    than ``min_magnitude`` are skipped (there the difference quotient is
    dominated by rounding). ``inputs`` are restored before returning.
    """
    _, analytic = op(inputs)
    coords = [
        (name, idx)
        for name, array in inputs.items()
        for idx in np.ndindex(array.shape)
        if abs(analytic[name][idx]) >= min_magnitude
    ]
    if max_coords is not None and max_coords < len(coords):
        rng = rng or np.random.default_rng(0)
        coords = [coords[int(i)] for i in rng.choice(len(coords), size=max_coords, replace=False)]

    worst = 0.0
    for name, idx in coords:
        array = inputs[name]
        original = array[idx]
        array[idx] = original + eps
        plus, _ = op(inputs)
        array[idx] = original - eps
        minus, _ = op(inputs)
        array[idx] = original
        numeric = (plus - minus) / (2.0 * eps)
        worst = max(worst, relative_error(float(analytic[name][idx]), numeric))
    return worst
