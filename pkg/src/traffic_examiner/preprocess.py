"""P-layer: raw packets to 28x28 traffic-graphs.

open_capture -> split_time_units -> purify -> refine -> unify_length -> to_graph
"""

from __future__ import annotations

import ipaddress
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import dpkt
import numpy as np
from PIL import Image

from .capture import LinkType, RawPacket, open_capture
from .config import PreprocessConfig
from .errors import ArgumentError, MalformedPacketError, ShapeError

logger = logging.getLogger(__name__)

GRAPH_SIDE = 28
GRAPH_BYTES = GRAPH_SIDE * GRAPH_SIDE
PAYLOAD_PREFIX_LEN = 64

_IP_DECODERS = {4: dpkt.ip.IP, 6: dpkt.ip6.IP6}


@dataclass(frozen=True)
class TimeUnitBatch:
    index: int
    packets: tuple[RawPacket, ...]


@dataclass(frozen=True)
class FiveTuple:
    src: str
    dst: str
    sport: int
    dport: int
    proto: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PurifiedPacket:
    """IP header onward, addresses anonymized when configured.

    ``l4_payload_offset`` is where the transport payload starts inside ``payload``.
    """

    five_tuple: FiveTuple
    payload: bytes
    l4_payload_offset: int
    timestamp: float = 0.0
    ordinal: int = 0

    @property
    def transport_payload(self) -> bytes:
        return self.payload[self.l4_payload_offset :]


@dataclass(frozen=True)
class FixedRecord:
    payload: bytes

    def __post_init__(self) -> None:
        if not self.payload:
            raise ShapeError("FixedRecord 不能为空")


@dataclass(frozen=True)
class GraphOrigin:
    file: str
    ordinal: int
    timestamp: float
    five_tuple: Optional[FiveTuple] = None
    payload_prefix: bytes = b""


@dataclass(frozen=True, eq=False)
class TrafficGraph:
    pixels: np.ndarray
    origin: Optional[GraphOrigin] = None

    def __post_init__(self) -> None:
        if self.pixels.shape != (GRAPH_SIDE, GRAPH_SIDE) or self.pixels.dtype != np.uint8:
            raise ShapeError(
                f"traffic-graph 必须是 {GRAPH_SIDE}x{GRAPH_SIDE} uint8，实际为 {self.pixels.shape} {self.pixels.dtype}"
            )

    def flatten(self) -> bytes:
        return self.pixels.tobytes(order="C")

    def save_png(self, path: str | Path) -> None:
        """8-bit grayscale, one pixel per byte."""
        Image.fromarray(self.pixels).save(Path(path), format="PNG")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrafficGraph):
            return NotImplemented
        return bool(np.array_equal(self.pixels, other.pixels)) and self.origin == other.origin

    @classmethod
    def from_flat(cls, flat: np.ndarray | bytes, origin: Optional[GraphOrigin] = None) -> "TrafficGraph":
        array = np.frombuffer(flat, dtype=np.uint8) if isinstance(flat, (bytes, bytearray)) else flat
        return cls(np.ascontiguousarray(array, dtype=np.uint8).reshape(GRAPH_SIDE, GRAPH_SIDE), origin)


@dataclass
class PreprocessSummary:
    packets_read: int = 0
    purified: int = 0
    discarded: int = 0
    malformed: int = 0
    deduplicated: int = 0
    empty_payload: int = 0
    time_units: int = 0
    graphs: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class PreprocessResult:
    graphs: list[TrafficGraph] = field(default_factory=list)
    summary: PreprocessSummary = field(default_factory=PreprocessSummary)


def split_time_units(packets: Sequence[RawPacket], unit_secs: float) -> list[TimeUnitBatch]:
    if unit_secs <= 0:
        raise ArgumentError(f"时间单元长度必须为正数，当前为 {unit_secs}")
    if not packets:
        return []
    ordered = sorted(packets, key=lambda p: p.timestamp)
    first = ordered[0].timestamp
    units: dict[int, list[RawPacket]] = {}
    for packet in ordered:
        index = math.floor((packet.timestamp - first) / unit_secs) + 1
        units.setdefault(index, []).append(packet)
    return [TimeUnitBatch(index, tuple(units[index])) for index in sorted(units)]


def _decode_ip(raw: bytes, ordinal: int) -> dpkt.ip.IP | dpkt.ip6.IP6 | None:
    decoder = _IP_DECODERS.get(raw[0] >> 4) if raw else None
    if decoder is None:
        return None
    try:
        return decoder(raw)
    except dpkt.UnpackError as exc:
        raise MalformedPacketError(f"第 {ordinal} 个报文 IP 头被截断") from exc


def _network_layer(packet: RawPacket) -> dpkt.ip.IP | dpkt.ip6.IP6 | None:
    if packet.link_type is LinkType.RAW_IP:
        return _decode_ip(packet.data, packet.ordinal)
    if packet.link_type is not LinkType.ETHERNET:
        return None
    try:
        eth = dpkt.ethernet.Ethernet(packet.data)
    except dpkt.UnpackError:
        return None
    tags = getattr(eth, "vlan_tags", None)
    ethertype = tags[-1].type if tags else eth.type
    if ethertype not in (dpkt.ethernet.ETH_TYPE_IP, dpkt.ethernet.ETH_TYPE_IP6):
        return None
    if isinstance(eth.data, (dpkt.ip.IP, dpkt.ip6.IP6)):
        return eth.data
    # dpkt leaves an undecodable IP header as raw bytes
    return _decode_ip(bytes(eth.data), packet.ordinal)


def _check_transport(l4: dpkt.Packet | bytes, proto: int, ordinal: int) -> dpkt.tcp.TCP | dpkt.udp.UDP:
    name = "TCP" if proto == dpkt.ip.IP_PROTO_TCP else "UDP"
    expected = dpkt.tcp.TCP if proto == dpkt.ip.IP_PROTO_TCP else dpkt.udp.UDP
    if not isinstance(l4, expected):
        raise MalformedPacketError(f"第 {ordinal} 个报文 {name} 头被截断")
    if isinstance(l4, dpkt.tcp.TCP) and len(l4.opts) < l4.off * 4 - l4.__hdr_len__:
        raise MalformedPacketError(f"第 {ordinal} 个报文 TCP 数据偏移非法")
    return l4


def purify(packet: RawPacket, cfg: PreprocessConfig) -> Optional[PurifiedPacket]:
    """Strip the link layer and anonymize addresses; ``None`` means discard.

    Raises ``MalformedPacketError`` when a header is shorter than it declares.
    """
    ip = _network_layer(packet)
    if ip is None:
        return None
    if isinstance(ip, dpkt.ip.IP):
        if len(ip.opts) < ip.hl * 4 - ip.__hdr_len__:
            raise MalformedPacketError(
                f"第 {packet.ordinal} 个报文 IPv4 头声明 {ip.hl * 4} 字节，仅捕获 {ip.__hdr_len__ + len(ip.opts)} 字节"
            )
        if ip.offset:
            return None
    else:
        fragment = ip.extension_hdrs.get(dpkt.ip.IP_PROTO_FRAGMENT)
        if fragment is not None and fragment._frag_off_resv_m >> 3:
            return None

    proto = ip.p
    if proto == dpkt.ip.IP_PROTO_UDP and not cfg.allows_udp:
        return None
    if proto not in (dpkt.ip.IP_PROTO_TCP, dpkt.ip.IP_PROTO_UDP):
        return None
    l4 = _check_transport(ip.data, proto, packet.ordinal)

    if cfg.anonymize:
        ip.src = bytes(len(ip.src))
        ip.dst = bytes(len(ip.dst))
    payload = bytes(ip)
    five_tuple = FiveTuple(
        src=str(ipaddress.ip_address(ip.src)),
        dst=str(ipaddress.ip_address(ip.dst)),
        sport=l4.sport,
        dport=l4.dport,
        proto="TCP" if proto == dpkt.ip.IP_PROTO_TCP else "UDP",
    )
    return PurifiedPacket(
        five_tuple=five_tuple,
        payload=payload,
        l4_payload_offset=len(payload) - len(l4.data),
        timestamp=packet.timestamp,
        ordinal=packet.ordinal,
    )


def refine(packets: Iterable[PurifiedPacket], cfg: PreprocessConfig) -> list[PurifiedPacket]:
    """Drop packets without transport payload and, when enabled, repeated payloads."""
    seen: set[bytes] = set()
    refined: list[PurifiedPacket] = []
    for packet in packets:
        if not packet.transport_payload:
            continue
        if cfg.dedupe:
            if packet.payload in seen:
                continue
            seen.add(packet.payload)
        refined.append(packet)
    return refined


def unify_length(data: bytes, target_len: int = GRAPH_BYTES) -> FixedRecord:
    if target_len <= 0:
        raise ArgumentError("target_len 必须为正数")
    return FixedRecord(bytes(data[:target_len]).ljust(target_len, b"\x00"))


def to_graph(record: FixedRecord, origin: Optional[GraphOrigin] = None) -> TrafficGraph:
    if len(record.payload) != GRAPH_BYTES:
        raise ShapeError(f"traffic-graph 需要 {GRAPH_BYTES} 字节，实际为 {len(record.payload)}")
    return TrafficGraph.from_flat(record.payload, origin)


def _purify_counted(packet: RawPacket, cfg: PreprocessConfig) -> PurifiedPacket | MalformedPacketError | None:
    try:
        return purify(packet, cfg)
    except MalformedPacketError as exc:
        return exc


def preprocess_packets(
    packets: Sequence[RawPacket],
    cfg: PreprocessConfig,
    source: str = "",
) -> PreprocessResult:
    result = PreprocessResult()
    summary = result.summary
    summary.packets_read = len(packets)
    batches = split_time_units(packets, cfg.time_unit_secs)
    summary.time_units = len(batches)

    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for batch in batches:
            if executor is not None:
                outcomes = list(executor.map(lambda p: _purify_counted(p, cfg), batch.packets))
            else:
                outcomes = [_purify_counted(p, cfg) for p in batch.packets]
            purified: list[PurifiedPacket] = []
            for packet, outcome in zip(batch.packets, outcomes):
                if isinstance(outcome, MalformedPacketError):
                    summary.malformed += 1
                    logger.debug("%s: %s", source or "<memory>", outcome)
                elif outcome is None:
                    summary.discarded += 1
                else:
                    purified.append(outcome)
            summary.purified += len(purified)
            with_payload = [p for p in purified if p.transport_payload]
            summary.empty_payload += len(purified) - len(with_payload)
            refined = refine(with_payload, cfg)
            summary.deduplicated += len(with_payload) - len(refined)
            for packet in refined:
                origin = GraphOrigin(
                    file=source,
                    ordinal=packet.ordinal,
                    timestamp=packet.timestamp,
                    five_tuple=packet.five_tuple,
                    payload_prefix=packet.transport_payload[:PAYLOAD_PREFIX_LEN],
                )
                result.graphs.append(to_graph(unify_length(packet.payload, cfg.target_len), origin))
    finally:
        if executor is not None:
            executor.shutdown()
    summary.graphs = len(result.graphs)
    return result


def preprocess_capture(path: str | Path, cfg: PreprocessConfig | None = None) -> PreprocessResult:
    cfg = cfg or PreprocessConfig()
    packets = open_capture(path)
    result = preprocess_packets(packets, cfg, source=str(path))
    s = result.summary
    logger.info(
        "%s: %d packets -> %d graphs (discarded %d, malformed %d, duplicates %d, empty %d)",
        path, s.packets_read, s.graphs, s.discarded, s.malformed, s.deduplicated, s.empty_payload,
    )
    return result


def write_pngs(graphs: Sequence[TrafficGraph], directory: str | Path, prefix: str) -> list[Path]:
    """Render each graph as ``<prefix>-<ordinal>.png``; graphs without an origin are numbered in order."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, graph in enumerate(graphs, 1):
        number = graph.origin.ordinal if graph.origin else i
        path = root / f"{prefix}-{number:06d}.png"
        graph.save_png(path)
        paths.append(path)
    logger.debug("%s: rendered %d traffic-graphs", root, len(paths))
    return paths
