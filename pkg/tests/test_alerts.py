import io
import json
import socket

import pytest

from traffic_examiner.alerts import (
    ALERT_SCHEMA_VERSION,
    Alert,
    FileSink,
    StreamSink,
    TcpSink,
    make_alert,
    parse_sink_spec,
    s1_emit_alert,
)
from traffic_examiner.errors import ConfigError, SinkDeliveryError
from traffic_examiner.preprocess import FiveTuple, GraphOrigin

ORIGIN = GraphOrigin("mal.pcap", 17, 1_600_000_123.5, FiveTuple("0.0.0.0", "0.0.0.0", 40000, 80, "TCP"))


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_alert_json_schema():
    stream = io.StringIO()
    alert = s1_emit_alert(ORIGIN, 0.97, StreamSink(stream))

    data = json.loads(stream.getvalue())
    assert stream.getvalue().count("\n") == 1
    assert data == {
        "version": ALERT_SCHEMA_VERSION,
        "ts": 1_600_000_123.5,
        "origin": {"file": "mal.pcap", "ordinal": 17},
        "tuple": {"src": "0.0.0.0", "dst": "0.0.0.0", "sport": 40000, "dport": 80, "proto": "TCP"},
        "confidence": 0.97,
    }
    assert Alert.from_json(stream.getvalue()) == alert


def test_alert_without_origin_and_clamped_confidence():
    alert = make_alert(None, 1.0000001)
    assert alert.confidence == 1.0
    assert alert.to_dict()["tuple"] is None
    with pytest.raises(ValueError):
        Alert(0.0, "", 0, None, 1.5)


def test_parse_sink_spec(tmp_path):
    assert isinstance(parse_sink_spec("stdout"), StreamSink)
    assert isinstance(parse_sink_spec(f"file:{tmp_path / 'a.jsonl'}"), FileSink)
    assert isinstance(parse_sink_spec("tcp:127.0.0.1:9000"), TcpSink)
    for bad in ("", "stdout:x", "file:", "tcp:host", "tcp::80", "tcp:host:port", "udp:1.2.3.4:5"):
        with pytest.raises(ConfigError):
            parse_sink_spec(bad)


def test_file_sink_appends_lines(tmp_path):
    path = tmp_path / "alerts.jsonl"
    sink = FileSink(path)
    for confidence in (0.5, 0.75):
        s1_emit_alert(ORIGIN, confidence, sink)
    sink.close()

    lines = path.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["confidence"] for line in lines] == [0.5, 0.75]


def test_file_sink_failure_is_a_delivery_error(tmp_path):
    sink = FileSink(tmp_path / "missing-dir" / "alerts.jsonl")
    with pytest.raises(SinkDeliveryError):
        sink.deliver("{}")


def test_tcp_sink_delivers_lines():
    with socket.socket() as server:
        server.bind(("127.0.0.1", 0))
        server.listen(1)
        sink = TcpSink("127.0.0.1", server.getsockname()[1], timeout=2.0)
        s1_emit_alert(ORIGIN, 0.9, sink)
        conn, _ = server.accept()
        with conn:
            conn.settimeout(2.0)
            received = b""
            while not received.endswith(b"\n"):
                received += conn.recv(4096)
        sink.close()

    assert json.loads(received)["origin"]["ordinal"] == 17


def test_unreachable_tcp_sink_stays_down():
    sink = TcpSink("127.0.0.1", _free_port(), timeout=0.5)
    with pytest.raises(SinkDeliveryError):
        sink.deliver("{}")
    with pytest.raises(SinkDeliveryError):
        sink.deliver("{}")
    sink.close()
