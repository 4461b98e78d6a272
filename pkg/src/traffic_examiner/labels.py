"""Class-index conventions shared by datasets, both models and the framework.

Every place that turns a label into an integer (NPY layout, training targets,
model outputs, reports) goes through this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import ArgumentError


class TopClass(Enum):
    ENCRYPTED = 0
    BENIGN = 1
    MALWARE = 2

    @property
    def display(self) -> str:
        return _TOP_NAMES[self]


class EncryptedClass(Enum):
    CHAT = 0
    EMAIL = 1
    FILE = 2
    P2P = 3
    STREAMING = 4
    VOIP = 5

    @property
    def display(self) -> str:
        return _SUB_NAMES[self]


_TOP_NAMES = {
    TopClass.ENCRYPTED: "Encrypted",
    TopClass.BENIGN: "Benign",
    TopClass.MALWARE: "Malware",
}
_SUB_NAMES = {
    EncryptedClass.CHAT: "Chat",
    EncryptedClass.EMAIL: "Email",
    EncryptedClass.FILE: "File",
    EncryptedClass.P2P: "P2P",
    EncryptedClass.STREAMING: "Streaming",
    EncryptedClass.VOIP: "VoIP",
}


@dataclass(frozen=True)
class ClassLabel:
    top: TopClass
    sub: Optional[EncryptedClass] = None

    def __post_init__(self) -> None:
        if (self.top is TopClass.ENCRYPTED) != (self.sub is not None):
            raise ArgumentError("仅加密流量（Encrypted）带有子类别")

    @property
    def name(self) -> str:
        return self.sub.display if self.sub is not None else self.top.display

    @property
    def path_parts(self) -> tuple[str, str]:
        """``(<top>, <sub>)`` directory parts; non-encrypted classes reuse the top name."""
        return self.top.display, self.name

    @classmethod
    def parse(cls, text: str) -> "ClassLabel":
        """Parse ``Benign``, ``Malware`` or ``Encrypted/<sub>`` (case-insensitive)."""
        top_text, _, sub_text = text.strip().partition("/")
        top = _lookup(TopClass, _TOP_NAMES, top_text)
        if top is TopClass.ENCRYPTED:
            if not sub_text:
                raise ArgumentError("加密流量标签需写成 Encrypted/<子类别>")
            return cls(top, _lookup(EncryptedClass, _SUB_NAMES, sub_text))
        if sub_text:
            raise ArgumentError(f"{top.display} 不带子类别")
        return cls(top)

    def __str__(self) -> str:
        if self.sub is None:
            return self.top.display
        return f"{self.top.display}/{self.sub.display}"


def _lookup(enum_cls, names: dict, text: str):
    for member, display in names.items():
        if display.lower() == text.strip().lower():
            return member
    raise ArgumentError(f"未知类别 {text!r}，可选：{', '.join(names.values())}")


# Canonical order: six encrypted sub-classes, then Benign, then Malware.
ALL_LABELS: tuple[ClassLabel, ...] = tuple(
    [ClassLabel(TopClass.ENCRYPTED, sub) for sub in EncryptedClass]
    + [ClassLabel(TopClass.BENIGN), ClassLabel(TopClass.MALWARE)]
)

THREE_CLASS_NAMES: tuple[str, ...] = tuple(t.display for t in TopClass)
SIX_CLASS_NAMES: tuple[str, ...] = tuple(s.display for s in EncryptedClass)
EIGHT_CLASS_NAMES: tuple[str, ...] = tuple(label.name for label in ALL_LABELS)

TASKS = ("3class", "6class")


def task_num_classes(task: str) -> int:
    if task == "3class":
        return len(TopClass)
    if task == "6class":
        return len(EncryptedClass)
    raise ArgumentError(f"未知任务 {task!r}，可选：{', '.join(TASKS)}")


def task_class_names(task: str) -> tuple[str, ...]:
    return THREE_CLASS_NAMES if task_num_classes(task) == 3 else SIX_CLASS_NAMES


def task_index(label: ClassLabel, task: str) -> int:
    """Training target of ``label`` for ``task``."""
    if task == "3class":
        return label.top.value
    if task == "6class":
        if label.sub is None:
            raise ArgumentError(f"{label} 不属于 6 分类任务")
        return label.sub.value
    raise ArgumentError(f"未知任务 {task!r}")


def eight_class_index(label: ClassLabel) -> int:
    return ALL_LABELS.index(label)
