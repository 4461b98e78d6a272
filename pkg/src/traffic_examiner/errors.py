from __future__ import annotations


EXIT_OK = 0
EXIT_IO = 1
EXIT_FORMAT = 2
EXIT_VERIFICATION = 3


class TrafficExaminerError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = EXIT_FORMAT


class ConfigError(TrafficExaminerError):
    pass


class ArgumentError(TrafficExaminerError, ValueError):
    pass


class ShapeError(TrafficExaminerError, ValueError):
    pass


class CaptureFormatError(TrafficExaminerError):
    def __init__(self, message: str, ordinal: int | None = None) -> None:
        super().__init__(message)
        self.ordinal = ordinal


class MalformedPacketError(TrafficExaminerError):
    pass


class DatasetFormatError(TrafficExaminerError):
    pass


class UndersizedPoolError(TrafficExaminerError):
    def __init__(self, class_name: str, available: int, requested: int) -> None:
        super().__init__(
            f"类别 {class_name} 样本不足：需要 {requested}，仅有 {available}（缺少 {requested - available}）"
        )
        self.class_name = class_name
        self.shortfall = requested - available


class CheckpointFormatError(TrafficExaminerError):
    pass


class ClassCountMismatchError(TrafficExaminerError):
    def __init__(self, expected: int, actual: int) -> None:
        super().__init__(f"模型类别数不匹配：期望 {expected}，实际 {actual}")
        self.expected = expected
        self.actual = actual


class UndefinedMetricError(TrafficExaminerError):
    pass


class NonFiniteError(TrafficExaminerError):
    pass


class SinkDeliveryError(TrafficExaminerError):
    pass


class VerificationError(TrafficExaminerError):
    exit_code = EXIT_VERIFICATION
