"""Labelled traffic-graph datasets on disk and in memory.

Directory layout::

    <root>/manifest.json
    <root>/Encrypted/Chat.npy ... <root>/Encrypted/VoIP.npy
    <root>/Benign/Benign.npy
    <root>/Malware/Malware.npy

Every NPY file is v1.0, dtype ``|u1``, shape ``(N, 784)``, C order.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Hashable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ArgumentError, DatasetFormatError, UndersizedPoolError
from .labels import ALL_LABELS, ClassLabel, EncryptedClass, TopClass
from .preprocess import GRAPH_BYTES, GRAPH_SIDE, TrafficGraph

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

BALANCED_COUNTS: dict[ClassLabel, int] = dict(
    zip(ALL_LABELS, (5840, 5852, 5839, 1022, 1829, 5847, 26229, 26229))
)


@dataclass(frozen=True)
class LabeledGraph:
    graph: TrafficGraph
    label: ClassLabel


@dataclass
class ManifestEntry:
    label: ClassLabel
    count: int
    percentage: float
    file: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def total(self) -> int:
        return sum(e.count for e in self.entries)

    def count(self, label: ClassLabel) -> int:
        return sum(e.count for e in self.entries if e.label == label)

    def top_level(self) -> dict[TopClass, tuple[int, float]]:
        total = self.total
        shares = {}
        for top in TopClass:
            count = sum(e.count for e in self.entries if e.label.top is top)
            shares[top] = (count, 100.0 * count / total if total else 0.0)
        return shares

    @classmethod
    def from_counts(
        cls,
        counts: Mapping[ClassLabel, int],
        sources: Sequence[str] = (),
        seed: Optional[int] = None,
    ) -> "DatasetManifest":
        total = sum(counts.values())
        entries = [
            ManifestEntry(
                label=label,
                count=counts[label],
                percentage=100.0 * counts[label] / total if total else 0.0,
                file="/".join(label.path_parts) + ".npy",
            )
            for label in ALL_LABELS
            if label in counts
        ]
        return cls(entries=entries, sources=sorted(set(sources)), seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "seed": self.seed,
            "sources": list(self.sources),
            "classes": [
                {
                    "label": str(e.label),
                    "count": e.count,
                    "percentage": e.percentage,
                    "file": e.file,
                }
                for e in self.entries
            ],
            "top_level": {
                top.display: {"count": count, "percentage": pct}
                for top, (count, pct) in self.top_level().items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            data = json.loads(text)
            entries = [
                ManifestEntry(
                    label=ClassLabel.parse(item["label"]),
                    count=int(item["count"]),
                    percentage=float(item["percentage"]),
                    file=item["file"],
                )
                for item in data["classes"]
            ]
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetFormatError(f"manifest.json 格式错误: {exc}") from exc
        return cls(entries=entries, sources=list(data.get("sources", [])), seed=data.get("seed"))


def balanced_manifest() -> DatasetManifest:
    return DatasetManifest.from_counts(BALANCED_COUNTS)


def label_path(root: Path, label: ClassLabel) -> Path:
    top, sub = label.path_parts
    return root / top / f"{sub}.npy"


def stack_graphs(graphs: Sequence[TrafficGraph]) -> np.ndarray:
    if not graphs:
        return np.zeros((0, GRAPH_BYTES), dtype=np.uint8)
    return np.stack([g.pixels.reshape(GRAPH_BYTES) for g in graphs]).astype(np.uint8, copy=False)


def _npy_row_count(path: Path) -> int:
    with path.open("rb") as fh:
        try:
            version = np.lib.format.read_magic(fh)
            if version == (1, 0):
                shape, _, _ = np.lib.format.read_array_header_1_0(fh)
            else:
                shape, _, _ = np.lib.format.read_array_header_2_0(fh)
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: 不是有效的 NPY 文件 ({exc})") from exc
    return int(shape[0]) if shape else 0


def write_npy(
    graphs: Sequence[LabeledGraph],
    directory: str | Path,
    classes: Optional[Sequence[ClassLabel]] = None,
    sources: Sequence[str] = (),
    seed: Optional[int] = None,
    append: bool = True,
) -> DatasetManifest:
    """Write one NPY file per class and rebuild ``manifest.json``.

    ``classes`` defaults to the labels present in ``graphs``; listed classes
    without graphs get an empty ``(0, 784)`` file. With ``append`` the new rows
    go after those already stored for the class; otherwise the file is replaced.
    Class files already in the directory but not written here are kept and
    counted in the manifest.
    """
    root = Path(directory)
    grouped: dict[ClassLabel, list[TrafficGraph]] = {}
    for item in graphs:
        grouped.setdefault(item.label, []).append(item.graph)
    targets = list(classes) if classes is not None else [l for l in ALL_LABELS if l in grouped]

    for label in targets:
        path = label_path(root, label)
        path.parent.mkdir(parents=True, exist_ok=True)
        array = stack_graphs(grouped.get(label, []))
        if append and path.exists():
            array = np.concatenate([read_npy_array(path), array])
        with path.open("wb") as fh:
            np.lib.format.write_array(fh, np.ascontiguousarray(array), version=(1, 0), allow_pickle=False)
        logger.debug("wrote %s (%d graphs)", path, array.shape[0])

    previous_sources: list[str] = []
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists():
        previous_sources = DatasetManifest.from_json(manifest_path.read_text(encoding="utf-8")).sources
    counts = {label: _npy_row_count(label_path(root, label)) for label in ALL_LABELS if label_path(root, label).exists()}
    manifest = DatasetManifest.from_counts(counts, [*previous_sources, *sources], seed)
    manifest_path.write_text(manifest.to_json(), encoding="utf-8")
    logger.info("%s: manifest written, %d graphs in %d classes", root, manifest.total, len(manifest.entries))
    return manifest


def read_npy_array(path: str | Path) -> np.ndarray:
    """Load an NPY file as a ``(N, 784)`` uint8 array."""
    path = Path(path)
    try:
        array = np.load(path, allow_pickle=False)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: 不是有效的 NPY 文件 ({exc})") from exc
    if array.dtype != np.uint8:
        raise DatasetFormatError(f"{path}: dtype 应为 uint8，实际为 {array.dtype}")
    if array.ndim == 3 and array.shape[1:] == (GRAPH_SIDE, GRAPH_SIDE):
        array = array.reshape(array.shape[0], GRAPH_BYTES)
    if array.ndim != 2 or array.shape[1] != GRAPH_BYTES:
        raise DatasetFormatError(
            f"{path}: shape 应为 (N, {GRAPH_BYTES}) 或 (N, {GRAPH_SIDE}, {GRAPH_SIDE})，实际为 {array.shape}"
        )
    return np.ascontiguousarray(array)


def read_npy(path: str | Path) -> list[TrafficGraph]:
    return [TrafficGraph.from_flat(row) for row in read_npy_array(path)]


def load_dataset(root: str | Path) -> dict[ClassLabel, list[LabeledGraph]]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"数据集目录不存在: {root}")
    dataset: dict[ClassLabel, list[LabeledGraph]] = {}
    for label in ALL_LABELS:
        path = label_path(root, label)
        if path.exists():
            dataset[label] = [LabeledGraph(g, label) for g in read_npy(path)]
    if not dataset:
        raise DatasetFormatError(f"{root}: 未找到任何类别文件")
    return dataset


def load_pools(root: str | Path, task: str) -> dict[Hashable, list[LabeledGraph]]:
    """Training pools for ``task``: top classes for 3class, encrypted sub-classes for 6class."""
    dataset = load_dataset(root)
    pools: dict[Hashable, list[LabeledGraph]] = {}
    if task == "3class":
        for top in TopClass:
            pools[top] = [g for label, items in dataset.items() if label.top is top for g in items]
    elif task == "6class":
        for sub in EncryptedClass:
            pools[sub] = dataset.get(ClassLabel(TopClass.ENCRYPTED, sub), [])
    else:
        raise ArgumentError(f"未知任务 {task!r}")
    return pools


def _key_name(key: Hashable) -> str:
    return getattr(key, "display", None) or str(key)


def balance(
    pools: Mapping[Hashable, Sequence[LabeledGraph]],
    n_per_class: int,
    seed: int,
) -> list[LabeledGraph]:
    """Sample ``n_per_class`` members of every pool without replacement, then shuffle."""
    if n_per_class < 0:
        raise ArgumentError("n_per_class 不能为负")
    for key, pool in pools.items():
        if len(pool) < n_per_class:
            raise UndersizedPoolError(_key_name(key), len(pool), n_per_class)
    rng = np.random.default_rng(seed)
    selected: list[LabeledGraph] = []
    for pool in pools.values():
        for index in rng.choice(len(pool), size=n_per_class, replace=False):
            selected.append(pool[int(index)])
    return [selected[int(i)] for i in rng.permutation(len(selected))]


def split(
    dataset: Sequence[LabeledGraph],
    test_fraction: float,
    seed: int,
    key: Callable[[LabeledGraph], Hashable] = lambda item: item.label,
) -> tuple[list[LabeledGraph], list[LabeledGraph]]:
    """Stratified train/test split; both partitions keep the input order."""
    if not 0.0 < test_fraction < 1.0:
        raise ArgumentError(f"test_fraction 必须位于 (0, 1)，当前为 {test_fraction}")
    if not dataset:
        raise ArgumentError("数据集为空，无法划分")
    groups: dict[Hashable, list[int]] = {}
    for index, item in enumerate(dataset):
        groups.setdefault(key(item), []).append(index)
    rng = np.random.default_rng(seed)
    test_indices: set[int] = set()
    for group_key, indices in groups.items():
        n_test = math.floor(test_fraction * len(indices) + 0.5)
        if n_test == 0 or n_test == len(indices):
            raise ArgumentError(
                f"类别 {_key_name(group_key)} 共 {len(indices)} 个样本，按 {test_fraction} 划分后训练集或测试集为空"
            )
        for pick in rng.permutation(len(indices))[:n_test]:
            test_indices.add(indices[int(pick)])
    train = [item for i, item in enumerate(dataset) if i not in test_indices]
    test = [item for i, item in enumerate(dataset) if i in test_indices]
    return train, test
