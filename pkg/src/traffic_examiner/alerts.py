"""S(1): IDS alert records and the line-delimited JSON sinks that carry them."""

from __future__ import annotations

import json
import logging
import socket
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional, Protocol

from .errors import ConfigError, SinkDeliveryError
from .preprocess import FiveTuple, GraphOrigin

logger = logging.getLogger(__name__)

ALERT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Alert:
    ts: float
    file: str
    ordinal: int
    five_tuple: Optional[FiveTuple]
    confidence: float
    version: int = ALERT_SCHEMA_VERSION

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence 必须位于 [0, 1]，当前为 {self.confidence}")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "ts": self.ts,
            "origin": {"file": self.file, "ordinal": self.ordinal},
            "tuple": self.five_tuple.to_dict() if self.five_tuple else None,
            "confidence": self.confidence,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "Alert":
        data = json.loads(line)
        tup = data.get("tuple")
        return cls(
            ts=data["ts"],
            file=data["origin"]["file"],
            ordinal=data["origin"]["ordinal"],
            five_tuple=FiveTuple(**tup) if tup else None,
            confidence=data["confidence"],
            version=data["version"],
        )


class AlertSink(Protocol):
    """Minimal interface for an alert destination."""

    def deliver(self, line: str) -> None: ...

    def close(self) -> None: ...


class StreamSink:
    """Writes alert lines to an already-open text stream (stdout by default)."""

    def __init__(self, stream: Optional[IO[str]] = None) -> None:
        self._stream = stream

    def deliver(self, line: str) -> None:
        stream = self._stream or sys.stdout
        try:
            stream.write(line + "\n")
            stream.flush()
        except (OSError, ValueError) as exc:
            raise SinkDeliveryError(f"写入输出流失败: {exc}") from exc

    def close(self) -> None:
        return


class FileSink:
    def __init__(self, path: str | Path) -> None:
        self._path = Path(path)
        self._fh: Optional[IO[str]] = None

    def deliver(self, line: str) -> None:
        try:
            if self._fh is None:
                self._fh = self._path.open("a", encoding="utf-8")
            self._fh.write(line + "\n")
            self._fh.flush()
        except OSError as exc:
            raise SinkDeliveryError(f"写入告警文件 {self._path} 失败: {exc}") from exc

    def close(self) -> None:
        if self._fh:
            try:
                self._fh.close()
            finally:
                self._fh = None


class TcpSink:
    """Streams alert lines to an IDS listener; after one failure the sink stays down."""

    def __init__(self, host: str, port: int, timeout: float = 2.0) -> None:
        self._address = (host, port)
        self._timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._broken: Optional[str] = None

    def deliver(self, line: str) -> None:
        if self._broken is not None:
            raise SinkDeliveryError(self._broken)
        try:
            if self._sock is None:
                self._sock = socket.create_connection(self._address, timeout=self._timeout)
            self._sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            self._broken = f"无法投递到 IDS {self._address[0]}:{self._address[1]}: {exc}"
            self.close()
            raise SinkDeliveryError(self._broken) from exc

    def close(self) -> None:
        if self._sock:
            try:
                self._sock.close()
            finally:
                self._sock = None


def parse_sink_spec(spec: str, tcp_timeout: float = 2.0) -> AlertSink:
    """``stdout`` | ``file:<path>`` | ``tcp:<host>:<port>``."""
    kind, _, target = spec.partition(":")
    if kind == "stdout" and not target:
        return StreamSink()
    if kind == "file" and target:
        return FileSink(target)
    if kind == "tcp":
        host, _, port = target.rpartition(":")
        if host and port.isdigit():
            return TcpSink(host, int(port), tcp_timeout)
    raise ConfigError(f"无法识别的告警输出 {spec!r}（可选 stdout、file:<路径>、tcp:<主机>:<端口>）")


def make_alert(origin: Optional[GraphOrigin], confidence: float) -> Alert:
    return Alert(
        ts=origin.timestamp if origin else 0.0,
        file=origin.file if origin else "",
        ordinal=origin.ordinal if origin else 0,
        five_tuple=origin.five_tuple if origin else None,
        confidence=min(max(float(confidence), 0.0), 1.0),
    )


def s1_emit_alert(origin: Optional[GraphOrigin], confidence: float, sink: AlertSink) -> Alert:
    """Build the alert and deliver it as one JSON line; raises ``SinkDeliveryError``."""
    alert = make_alert(origin, confidence)
    sink.deliver(alert.to_json())
    return alert
