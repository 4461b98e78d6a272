"""Confusion-matrix accounting: accuracy, per-class precision / recall / F1, macro averages."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np
import numpy.typing as npt
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support
from tabulate import tabulate

from .errors import ArgumentError, UndefinedMetricError

TABLE_FORMAT = "orgtbl"


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[truth][prediction]``."""

    n_classes: int
    counts: npt.NDArray[np.int64]

    def __post_init__(self) -> None:
        if self.counts.shape != (self.n_classes, self.n_classes):
            raise ArgumentError(f"混淆矩阵形状应为 {self.n_classes}x{self.n_classes}")
        if (self.counts < 0).any():
            raise ArgumentError("混淆矩阵不能包含负数")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def labels(self) -> npt.NDArray[np.intp]:
        return np.arange(self.n_classes)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "ConfusionMatrix":
        counts = np.asarray(rows, dtype=np.int64)
        return cls(counts.shape[0], counts)

    def samples(self) -> tuple[npt.NDArray[np.intp], npt.NDArray[np.intp]]:
        """(truths, predictions) with one entry per counted pair, in row-major cell order."""
        truth_idx, pred_idx = np.indices(self.counts.shape)
        repeats = self.counts.ravel()
        return np.repeat(truth_idx.ravel(), repeats), np.repeat(pred_idx.ravel(), repeats)

    def to_table(self, class_names: Sequence[str]) -> str:
        rows = [[name, *row] for name, row in zip(class_names, self.counts.tolist())]
        return tabulate(rows, headers=["真值\\预测", *class_names], tablefmt=TABLE_FORMAT)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    precision_undefined: bool = False
    recall_undefined: bool = False


@dataclass(frozen=True)
class NamedClassMetrics:
    name: str
    metrics: ClassMetrics


@dataclass(frozen=True)
class EvalReport:
    classes: tuple[NamedClassMetrics, ...]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    total: int
    confusion: tuple[tuple[int, ...], ...] = ()

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "accuracy": self.accuracy,
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "classes": [{"name": c.name, **asdict(c.metrics)} for c in self.classes],
            "confusion": [list(row) for row in self.confusion],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def to_text(self) -> str:
        names = [c.name for c in self.classes]
        rows = []
        for c in self.classes:
            m = c.metrics
            flag = " *" if m.precision_undefined or m.recall_undefined else ""
            rows.append([c.name + flag, m.precision, m.recall, m.f1, m.support])
        rows.append(["macro avg", self.macro_precision, self.macro_recall, self.macro_f1, self.total])
        table = tabulate(
            rows,
            headers=["class", "precision", "recall", "f1", "support"],
            tablefmt=TABLE_FORMAT,
            floatfmt=".5f",
        )
        parts = []
        if self.confusion:
            counts = np.asarray(self.confusion, dtype=np.int64)
            parts += [ConfusionMatrix(len(names), counts).to_table(names), ""]
        parts += [table, f"accuracy: {self.accuracy:.5f}"]
        if any(c.metrics.precision_undefined or c.metrics.recall_undefined for c in self.classes):
            parts.append("* 分母为 0 的指标记为 0")
        return "\n".join(parts) + "\n"


def confusion(preds: npt.ArrayLike, truths: npt.ArrayLike, n_classes: int) -> ConfusionMatrix:
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(truths, dtype=np.int64).reshape(-1)
    if n_classes < 1:
        raise ArgumentError("类别数必须为正")
    if p.shape != t.shape:
        raise ArgumentError(f"预测与真值长度不一致：{p.size} vs {t.size}")
    for name, values in (("预测", p), ("真值", t)):
        if values.size and (values.min() < 0 or values.max() >= n_classes):
            raise ArgumentError(f"{name}索引超出 [0, {n_classes})")
    if not p.size:
        return ConfusionMatrix(n_classes, np.zeros((n_classes, n_classes), dtype=np.int64))
    counts = confusion_matrix(t, p, labels=np.arange(n_classes))
    return ConfusionMatrix(n_classes, counts.astype(np.int64))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedMetricError("空混淆矩阵无法计算准确率")
    truths, preds = cm.samples()
    return float(accuracy_score(truths, preds))


def _all_classes(cm: ConfusionMatrix) -> list[ClassMetrics]:
    predicted = cm.counts.sum(axis=0)
    actual = cm.counts.sum(axis=1)
    if cm.total == 0:
        return [ClassMetrics(0.0, 0.0, 0.0, 0, True, True) for _ in range(cm.n_classes)]
    truths, preds = cm.samples()
    precision, recall, f1, support = precision_recall_fscore_support(
        truths, preds, labels=cm.labels, average=None, zero_division=0
    )
    return [
        ClassMetrics(
            float(precision[c]),
            float(recall[c]),
            float(f1[c]),
            int(support[c]),
            precision_undefined=bool(predicted[c] == 0),
            recall_undefined=bool(actual[c] == 0),
        )
        for c in range(cm.n_classes)
    ]


def per_class(cm: ConfusionMatrix, c: int) -> ClassMetrics:
    """Ratios with a zero denominator are reported as 0 and flagged undefined."""
    if not 0 <= c < cm.n_classes:
        raise ArgumentError(f"类别索引 {c} 超出范围")
    return _all_classes(cm)[c]


def report(cm: ConfusionMatrix, class_names: Sequence[str]) -> EvalReport:
    if len(class_names) != cm.n_classes:
        raise ArgumentError(f"类别名数量 {len(class_names)} 与矩阵维度 {cm.n_classes} 不符")
    acc = accuracy(cm)
    per = _all_classes(cm)
    return EvalReport(
        classes=tuple(NamedClassMetrics(name, m) for name, m in zip(class_names, per)),
        accuracy=acc,
        macro_precision=float(np.mean([m.precision for m in per])),
        macro_recall=float(np.mean([m.recall for m in per])),
        macro_f1=float(np.mean([m.f1 for m in per])),
        total=cm.total,
        confusion=tuple(tuple(int(v) for v in row) for row in cm.counts),
    )
