import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from traffic_examiner.errors import ArgumentError, UndefinedMetricError
from traffic_examiner.metrics import ConfusionMatrix, accuracy, confusion, per_class, report


def test_two_class_example():
    cm = ConfusionMatrix.from_rows([[8, 2], [3, 7]])
    assert accuracy(cm) == 0.75
    m = per_class(cm, 0)
    assert m.precision == pytest.approx(8 / 11)
    assert m.recall == pytest.approx(0.8)
    assert m.f1 == pytest.approx(0.76190, abs=1e-5)
    assert m.support == 10


def test_uniform_confusion():
    r = report(ConfusionMatrix.from_rows(np.full((3, 3), 5)), ["a", "b", "c"])
    assert r.accuracy == pytest.approx(1 / 3)
    for c in r.classes:
        assert c.metrics.precision == pytest.approx(1 / 3)
        assert c.metrics.recall == pytest.approx(1 / 3)
    assert r.macro_f1 == pytest.approx(1 / 3)


def test_undefined_ratios_are_zero_and_flagged():
    cm = ConfusionMatrix.from_rows([[4, 0, 0], [2, 0, 0], [0, 0, 0]])
    never_predicted = per_class(cm, 1)
    assert never_predicted.precision == 0.0 and never_predicted.precision_undefined
    assert not never_predicted.recall_undefined
    absent = per_class(cm, 2)
    assert absent.recall_undefined and absent.precision_undefined
    assert absent.f1 == 0.0

    text = report(cm, ["A", "B", "C"]).to_text()
    assert "*" in text
    assert "accuracy: 0.66667" in text


def test_empty_matrix_has_no_accuracy():
    cm = confusion([], [], 3)
    assert cm.total == 0
    with pytest.raises(UndefinedMetricError):
        accuracy(cm)


def test_input_errors():
    with pytest.raises(ArgumentError):
        confusion([0, 1], [0], 2)
    with pytest.raises(ArgumentError):
        confusion([0, 2], [0, 1], 2)
    with pytest.raises(ArgumentError):
        confusion([0], [-1], 2)
    with pytest.raises(ArgumentError):
        ConfusionMatrix.from_rows([[1, -1], [0, 0]])
    with pytest.raises(ArgumentError):
        report(ConfusionMatrix.from_rows([[1]]), ["a", "b"])


def test_report_dict_and_text_agree():
    cm = confusion([0, 1, 1, 2, 2, 2], [0, 1, 2, 2, 2, 0], 3)
    r = report(cm, ["Encrypted", "Benign", "Malware"])
    data = json.loads(r.to_json())

    assert data["total"] == 6
    assert [c["name"] for c in data["classes"]] == ["Encrypted", "Benign", "Malware"]
    assert data["accuracy"] == r.accuracy
    text = r.to_text()
    assert f"accuracy: {data['accuracy']:.5f}" in text
    assert f"{data['macro']['f1']:.5f}" in text.splitlines()[-2]


pairs = st.integers(min_value=2, max_value=8).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=200),
    )
)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@settings(max_examples=1000, deadline=None)
@given(pairs)
def test_matches_brute_force_counting(case):
    n, rows = case
    preds, truths = [p for p, _ in rows], [t for _, t in rows]
    cm = confusion(preds, truths, n)

    assert cm.total == len(rows)
    assert accuracy(cm) == sum(p == t for p, t in rows) / len(rows)
    expected_p, expected_r, expected_f1 = [], [], []
    for c in range(n):
        tp = sum(p == c and t == c for p, t in rows)
        predicted = sum(p == c for p in preds)
        actual = sum(t == c for t in truths)
        precision, recall = _ratio(tp, predicted), _ratio(tp, actual)
        f1 = _ratio(2 * precision * recall, precision + recall) if precision + recall else 0.0
        expected_p.append(precision)
        expected_r.append(recall)
        expected_f1.append(f1)

        m = per_class(cm, c)
        assert m.precision == precision
        assert m.recall == recall
        assert m.f1 == pytest.approx(f1)
        assert m.support == actual
        assert m.precision_undefined == (predicted == 0)
        assert m.recall_undefined == (actual == 0)

    r = report(cm, [f"c{i}" for i in range(n)])
    assert r.macro_precision == pytest.approx(sum(expected_p) / n)
    assert r.macro_recall == pytest.approx(sum(expected_r) / n)
    assert r.macro_f1 == pytest.approx(sum(expected_f1) / n)
    assert r.total == len(rows)


@settings(max_examples=300, deadline=None)
@given(pairs, st.randoms(use_true_random=False))
def test_relabelling_permutes_metrics(case, random):
    n, rows = case
    perm = list(range(n))
    random.shuffle(perm)
    cm = confusion([p for p, _ in rows], [t for _, t in rows], n)
    moved = confusion([perm[p] for p, _ in rows], [perm[t] for _, t in rows], n)

    assert accuracy(moved) == pytest.approx(accuracy(cm))
    for c in range(n):
        a, b = per_class(moved, perm[c]), per_class(cm, c)
        assert (a.precision, a.recall, a.f1) == pytest.approx((b.precision, b.recall, b.f1))
        assert (a.support, a.precision_undefined, a.recall_undefined) == (
            b.support,
            b.precision_undefined,
            b.recall_undefined,
        )


def test_text_report_includes_confusion_table():
    cm = ConfusionMatrix.from_rows([[3, 1], [0, 2]])
    text = report(cm, ["Benign", "Malware"]).to_text()
    head = text.splitlines()[:4]

    assert "Benign" in head[0] and "Malware" in head[0]
    assert head[1].startswith("|-")
    assert [cell.strip() for cell in head[2].split("|")[2:4]] == ["3", "1"]
    assert json.loads(report(cm, ["Benign", "Malware"]).to_json())["confusion"] == [[3, 1], [0, 2]]
