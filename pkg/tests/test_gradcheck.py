import numpy as np
import pytest

from traffic_examiner import verification
from traffic_examiner.config import Hyperparams
from traffic_examiner.errors import VerificationError
from traffic_examiner.model import Architecture, build, loss
from traffic_examiner.nn import grad_check, relu, relu_backward
from traffic_examiner.verification import (
    GRADCHECK_CASES,
    CaseResult,
    GradCheckCase,
    check_case,
    require_passing,
    run_suite,
)


def _halved_relu(rng):
    x = rng.uniform(0.5, 1.0, size=(2, 5))

    def op(a):
        out, cache = relu(a["x"])
        return float(out.sum()), {"x": 0.5 * relu_backward(np.ones_like(out), cache)}

    return op, {"x": x}


def test_registry_covers_every_differentiable_op():
    assert set(GRADCHECK_CASES) == {
        "conv1d",
        "relu",
        "maxpool1d",
        "lrn",
        "dense",
        "dropout",
        "lstm_step",
        "lstm_sequence",
        "softmax_cross_entropy",
        "l1_penalty",
        "model_loss",
    }


@pytest.mark.parametrize("name", sorted(GRADCHECK_CASES))
def test_case_passes(name):
    result = check_case(GRADCHECK_CASES[name], seed=7, seeds=3)
    assert result.passed, f"{name}: {result.max_error:.3e}"
    assert result.seeds == 3


def test_suite_is_deterministic():
    cases = {name: GRADCHECK_CASES[name] for name in ("dense", "lstm_step")}
    assert run_suite(seed=1, seeds=2, cases=cases) == run_suite(seed=1, seeds=2, cases=cases)


def test_wrong_backward_fails_and_is_named():
    results = run_suite(seeds=2, cases={"halved": GradCheckCase("halved", _halved_relu)})
    assert not results[0].passed
    with pytest.raises(VerificationError, match="halved"):
        require_passing(results)


def test_require_passing_accepts_clean_results():
    require_passing([CaseResult("dense", 1e-9, 1)])


def test_suite_reads_patched_registry(monkeypatch):
    monkeypatch.setattr(verification, "GRADCHECK_CASES", {"halved": GradCheckCase("halved", _halved_relu)})
    assert [r.name for r in run_suite(seeds=1)] == ["halved"]


@pytest.mark.slow
def test_full_size_model_gradient():
    m = build(3, 5, Architecture())
    rng = np.random.default_rng(5)
    batch = rng.uniform(0.0, 1.0, size=(2, 784))
    labels = np.array([0, 2])
    hp = Hyperparams(dropout=0.0)

    def op(a):
        return loss(m, batch, labels, hp)

    assert grad_check(op, m.named_arrays(), max_coords=30, rng=rng, min_magnitude=1e-5) < 1e-4
