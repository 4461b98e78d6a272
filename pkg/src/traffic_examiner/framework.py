"""G-layer / S-layer orchestration.

Every traffic-graph is first sorted into Encrypted, Benign or Malware by the
3-class model; the verdict alone decides the follow-up action:

    Malware   -> S(1) alert to the IDS sink
    Benign    -> S(2) port / DPI application label
    Encrypted -> S(3) 6-class encrypted-traffic model
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .alerts import Alert, AlertSink, make_alert, s1_emit_alert
from .config import PreprocessConfig
from .dpi import AppLabel, s2_port_dpi
from .errors import ClassCountMismatchError, SinkDeliveryError, TrafficExaminerError
from .labels import ClassLabel, EncryptedClass, TopClass, eight_class_index
from .model import Prediction, TestModelParams, predict, predict_batch
from .preprocess import PreprocessSummary, TrafficGraph, preprocess_capture

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GLabel:
    klass: TopClass
    confidence: float


@dataclass(frozen=True)
class S1Alert:
    alert: Alert
    delivered: bool = True


@dataclass(frozen=True)
class S2AppLabel:
    app: AppLabel


@dataclass(frozen=True)
class S3EncryptedClass:
    sub: EncryptedClass
    confidence: float


SAction = Union[S1Alert, S2AppLabel, S3EncryptedClass]


def _require_classes(model: TestModelParams, expected: int) -> None:
    if model.num_classes != expected:
        raise ClassCountMismatchError(expected, model.num_classes)


def _g_label(prediction: Prediction) -> GLabel:
    return GLabel(TopClass(prediction.label), prediction.confidence)


def g_classify(g_model: TestModelParams, graph: TrafficGraph) -> GLabel:
    _require_classes(g_model, len(TopClass))
    return _g_label(predict(g_model, graph))


def g_classify_batch(g_model: TestModelParams, graphs: Sequence[TrafficGraph], chunk: int = 64) -> list[GLabel]:
    _require_classes(g_model, len(TopClass))
    if not graphs:
        return []
    return [_g_label(p) for p in predict_batch(g_model, graphs, chunk)]


def s3_classify(s_model: TestModelParams, graph: TrafficGraph) -> S3EncryptedClass:
    _require_classes(s_model, len(EncryptedClass))
    prediction = predict(s_model, graph)
    return S3EncryptedClass(EncryptedClass(prediction.label), prediction.confidence)


@dataclass
class PipelineReport:
    graphs_classified: int = 0
    g_counts: Counter = field(default_factory=Counter)
    action_counts: Counter = field(default_factory=Counter)
    s2_app_counts: Counter = field(default_factory=Counter)
    s3_sub_counts: Counter = field(default_factory=Counter)
    alerts_emitted: int = 0
    delivery_failures: int = 0
    action_errors: int = 0
    preprocess: PreprocessSummary = field(default_factory=PreprocessSummary)
    duration_secs: float = 0.0

    def record(self, label: GLabel, action: SAction) -> None:
        self.graphs_classified += 1
        self.g_counts[label.klass.display] += 1
        if isinstance(action, S1Alert):
            self.action_counts["S1"] += 1
            if action.delivered:
                self.alerts_emitted += 1
            else:
                self.delivery_failures += 1
        elif isinstance(action, S2AppLabel):
            self.action_counts["S2"] += 1
            self.s2_app_counts[action.app.name] += 1
        else:
            self.action_counts["S3"] += 1
            self.s3_sub_counts[action.sub.display] += 1

    def to_dict(self, include_timing: bool = True) -> dict:
        data = {
            "graphs_classified": self.graphs_classified,
            "g_counts": {t.display: self.g_counts.get(t.display, 0) for t in TopClass},
            "actions": {name: self.action_counts.get(name, 0) for name in ("S1", "S2", "S3")},
            "s2_apps": dict(sorted(self.s2_app_counts.items())),
            "s3_classes": {s.display: self.s3_sub_counts.get(s.display, 0) for s in EncryptedClass},
            "alerts_emitted": self.alerts_emitted,
            "delivery_failures": self.delivery_failures,
            "action_errors": self.action_errors,
            "preprocess": {
                "packets_read": self.preprocess.packets_read,
                "purified": self.preprocess.purified,
                "discarded": self.preprocess.discarded,
                "malformed": self.preprocess.malformed,
                "graphs": self.preprocess.graphs,
            },
        }
        if include_timing:
            data["duration_secs"] = self.duration_secs
        return data

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, ensure_ascii=False) + "\n"


@dataclass
class DispatchContext:
    s_model: TestModelParams
    sink: AlertSink
    report: PipelineReport = field(default_factory=PipelineReport)


def dispatch(label: GLabel, graph: TrafficGraph, ctx: DispatchContext) -> SAction:
    origin = graph.origin
    if label.klass is TopClass.MALWARE:
        try:
            return S1Alert(s1_emit_alert(origin, label.confidence, ctx.sink))
        except SinkDeliveryError as exc:
            logger.warning("alert delivery failed: %s", exc)
            return S1Alert(make_alert(origin, label.confidence), delivered=False)
    if label.klass is TopClass.BENIGN:
        if origin is None:
            return S2AppLabel(s2_port_dpi(None, b""))
        return S2AppLabel(s2_port_dpi(origin.five_tuple, origin.payload_prefix))
    if label.klass is TopClass.ENCRYPTED:
        return s3_classify(ctx.s_model, graph)
    raise AssertionError(f"unhandled G-layer label {label.klass}")


def classify_graphs(
    graphs: Sequence[TrafficGraph],
    g_model: TestModelParams,
    ctx: DispatchContext,
    chunk: int = 64,
) -> list[SAction]:
    """Classify in batches, then execute actions one by one in input order."""
    actions = []
    for graph, label in zip(graphs, g_classify_batch(g_model, graphs, chunk)):
        try:
            action = dispatch(label, graph, ctx)
        except TrafficExaminerError as exc:
            ctx.report.action_errors += 1
            logger.warning("action for graph %s failed: %s", graph.origin, exc)
            continue
        ctx.report.record(label, action)
        actions.append(action)
    return actions


def run(
    capture: str | Path,
    g_model: TestModelParams,
    s_model: TestModelParams,
    cfg: PreprocessConfig,
    sink: AlertSink,
    chunk: int = 64,
) -> PipelineReport:
    _require_classes(g_model, len(TopClass))
    _require_classes(s_model, len(EncryptedClass))
    started = time.perf_counter()
    ctx = DispatchContext(s_model=s_model, sink=sink)
    result = preprocess_capture(capture, cfg)
    ctx.report.preprocess = result.summary
    classify_graphs(result.graphs, g_model, ctx, chunk)
    ctx.report.duration_secs = time.perf_counter() - started
    report = ctx.report
    logger.info(
        "%s: %d graphs classified in %.2fs, actions S1=%d S2=%d S3=%d, %d delivery failures",
        capture,
        report.graphs_classified,
        report.duration_secs,
        report.action_counts["S1"],
        report.action_counts["S2"],
        report.action_counts["S3"],
        report.delivery_failures,
    )
    return report


def joint_label(g: GLabel, sub: Optional[EncryptedClass]) -> ClassLabel:
    if g.klass is TopClass.ENCRYPTED:
        if sub is None:
            raise ValueError("加密流量需要子类别")
        return ClassLabel(TopClass.ENCRYPTED, sub)
    return ClassLabel(g.klass)


def joint_predict(
    g_model: TestModelParams,
    s_model: TestModelParams,
    graphs: Sequence[TrafficGraph],
    chunk: int = 64,
) -> list[int]:
    """Chain both models into the 8-class label space."""
    _require_classes(s_model, len(EncryptedClass))
    labels = g_classify_batch(g_model, graphs, chunk)
    encrypted = [i for i, g in enumerate(labels) if g.klass is TopClass.ENCRYPTED]
    subs: dict[int, EncryptedClass] = {}
    if encrypted:
        for i, p in zip(encrypted, predict_batch(s_model, [graphs[i] for i in encrypted], chunk)):
            subs[i] = EncryptedClass(p.label)
    return [eight_class_index(joint_label(g, subs.get(i))) for i, g in enumerate(labels)]


__all__ = [
    "DispatchContext",
    "GLabel",
    "PipelineReport",
    "S1Alert",
    "S2AppLabel",
    "S3EncryptedClass",
    "SAction",
    "classify_graphs",
    "dispatch",
    "g_classify",
    "g_classify_batch",
    "joint_predict",
    "run",
    "s3_classify",
]
