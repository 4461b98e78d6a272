"""Desk-scale synthetic traffic: labelled graphs and small captures."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import dpkt
import numpy as np

from .capture import LinkType, RawPacket, write_capture
from .dataset import LabeledGraph
from .errors import ArgumentError
from .labels import ClassLabel
from .preprocess import GRAPH_BYTES, GRAPH_SIDE, TrafficGraph


@dataclass(frozen=True)
class ClassSynth:
    label: ClassLabel
    mean: float
    std: float
    markers: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for offset, value in self.markers.items():
            if not 0 <= offset < GRAPH_BYTES or not 0 <= value <= 255:
                raise ArgumentError(f"{self.label}: 标记字节 {offset}={value} 越界")


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[ClassSynth, ...]
    samples_per_class: int
    seed: int

    def __post_init__(self) -> None:
        if self.samples_per_class < 0:
            raise ArgumentError("samples_per_class 不能为负")
        signatures = [frozenset(c.markers.items()) for c in self.classes]
        if any(not sig for sig in signatures) or len(set(signatures)) != len(signatures):
            raise ArgumentError("每个类别都需要互不相同的标记字节")


def default_synth_spec(labels: Sequence[ClassLabel], samples_per_class: int, seed: int) -> SynthSpec:
    """One bright marker row per class plus a class-specific first byte."""
    if len(labels) > GRAPH_SIDE // 2:
        raise ArgumentError("类别过多")
    classes = []
    for i, label in enumerate(labels):
        row = 2 * i + 1
        markers = {row * GRAPH_SIDE + c: 255 for c in range(GRAPH_SIDE)}
        markers[0] = (0x20 + 0x1B * i) & 0xFF
        classes.append(ClassSynth(label, mean=40.0 + 12.0 * i, std=24.0, markers=markers))
    return SynthSpec(tuple(classes), samples_per_class, seed)


def synth_generate(spec: SynthSpec) -> list[LabeledGraph]:
    rng = np.random.default_rng(spec.seed)
    graphs: list[LabeledGraph] = []
    for cls in spec.classes:
        noise = rng.normal(cls.mean, cls.std, size=(spec.samples_per_class, GRAPH_BYTES))
        pixels = np.clip(np.rint(noise), 0, 255).astype(np.uint8)
        if cls.markers:
            offsets = np.fromiter(cls.markers.keys(), dtype=np.intp)
            pixels[:, offsets] = np.fromiter(cls.markers.values(), dtype=np.uint8)
        graphs.extend(LabeledGraph(TrafficGraph.from_flat(row), cls.label) for row in pixels)
    return graphs


_ETH_DST = bytes.fromhex("020000000002")
_ETH_SRC = bytes.fromhex("020000000001")


def ipv4_frame(
    src: str,
    dst: str,
    sport: int,
    dport: int,
    payload: bytes = b"",
    proto: str = "TCP",
    tcp_flags: int = dpkt.tcp.TH_PUSH | dpkt.tcp.TH_ACK,
    ethernet: bool = True,
) -> bytes:
    """Build an Ethernet (or raw) IPv4 frame carrying one TCP or UDP segment.

    Checksums are filled in by dpkt on serialization.
    """
    if proto == "TCP":
        l4 = dpkt.tcp.TCP(sport=sport, dport=dport, seq=1, flags=tcp_flags, win=65535, data=payload)
        proto_num = dpkt.ip.IP_PROTO_TCP
    elif proto == "UDP":
        l4 = dpkt.udp.UDP(sport=sport, dport=dport, ulen=8 + len(payload), data=payload)
        proto_num = dpkt.ip.IP_PROTO_UDP
    else:
        raise ArgumentError(f"不支持的传输层协议 {proto}")
    ip = dpkt.ip.IP(
        src=ipaddress.IPv4Address(src).packed,
        dst=ipaddress.IPv4Address(dst).packed,
        p=proto_num,
        ttl=64,
        df=1,
        data=l4,
    )
    if not ethernet:
        return bytes(ip)
    return bytes(dpkt.ethernet.Ethernet(dst=_ETH_DST, src=_ETH_SRC, type=dpkt.ethernet.ETH_TYPE_IP, data=ip))


_SYNTH_PAYLOADS = (
    (80, "TCP", b"GET /index.html HTTP/1.1\r\nHost: example.test\r\n\r\n"),
    (25, "TCP", b"220 mail.example.test ESMTP ready\r\n"),
    (443, "TCP", b"\x16\x03\x01\x00\xa5\x01\x00\x00\xa1\x03\x03"),
    (53, "UDP", b"\x12\x34\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x07example\x04test\x00\x00\x01\x00\x01"),
    (6881, "TCP", b"\x13BitTorrent protocol"),
)


def synth_capture(path: str | Path, n_packets: int, seed: int, start: float = 1_600_000_000.0) -> int:
    """Write a deterministic capture of ``n_packets`` data-bearing packets."""
    rng = np.random.default_rng(seed)
    packets = []
    for i in range(n_packets):
        port, proto, prefix = _SYNTH_PAYLOADS[int(rng.integers(len(_SYNTH_PAYLOADS)))]
        tail = rng.integers(0, 256, size=int(rng.integers(16, 600)), dtype=np.uint8).tobytes()
        frame = ipv4_frame(
            f"10.0.{i // 250}.{i % 250 + 1}",
            "192.0.2.10",
            int(rng.integers(1024, 65535)),
            port,
            prefix + i.to_bytes(4, "big") + tail,
            proto=proto,
        )
        packets.append(RawPacket(timestamp=start + 0.25 * i, link_type=LinkType.ETHERNET, data=frame))
    return write_capture(path, packets)
