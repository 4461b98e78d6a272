"""Classic libpcap file reading and writing.

Layout: global header | record header | record data | record header | ...
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import dpkt

from .errors import CaptureFormatError

logger = logging.getLogger(__name__)

GLOBAL_HEADER_LEN = dpkt.pcap.FileHdr.__hdr_len__
RECORD_HEADER_LEN = dpkt.pcap.PktHdr.__hdr_len__
SNAPLEN = 65535


class LinkType(Enum):
    ETHERNET = "ethernet"
    RAW_IP = "raw-ip"
    OTHER = "other"

    @classmethod
    def from_linktype(cls, value: int) -> "LinkType":
        if value == 1:
            return cls.ETHERNET
        # 101 is LINKTYPE_RAW; 12/14 are the historical DLT_RAW values, 228/229 IPv4/IPv6.
        if value in (12, 14, 101, 228, 229):
            return cls.RAW_IP
        return cls.OTHER

    @property
    def linktype(self) -> int:
        return {LinkType.ETHERNET: 1, LinkType.RAW_IP: 101, LinkType.OTHER: 147}[self]


@dataclass(frozen=True)
class RawPacket:
    timestamp: float
    link_type: LinkType
    data: bytes
    ordinal: int = 0

    def __post_init__(self) -> None:
        if not self.data:
            raise ValueError("RawPacket 不能为空")
        if self.timestamp < 0:
            raise ValueError("RawPacket 时间戳不能为负")


@dataclass(frozen=True)
class _FileFormat:
    file_header: type[dpkt.pcap.FileHdr]
    record_header: type[dpkt.pcap.PktHdr]
    ticks_per_sec: int


# keyed by the first four bytes read big-endian
_FORMATS = {
    dpkt.pcap.TCPDUMP_MAGIC: _FileFormat(dpkt.pcap.FileHdr, dpkt.pcap.PktHdr, 1_000_000),
    dpkt.pcap.TCPDUMP_MAGIC_NANO: _FileFormat(dpkt.pcap.FileHdr, dpkt.pcap.PktHdr, 1_000_000_000),
    dpkt.pcap.PMUDPCT_MAGIC: _FileFormat(dpkt.pcap.LEFileHdr, dpkt.pcap.LEPktHdr, 1_000_000),
    dpkt.pcap.PMUDPCT_MAGIC_NANO: _FileFormat(dpkt.pcap.LEFileHdr, dpkt.pcap.LEPktHdr, 1_000_000_000),
}


def _detect_format(header: bytes) -> _FileFormat:
    magic = int.from_bytes(header[:4], "big")
    try:
        return _FORMATS[magic]
    except KeyError:
        raise CaptureFormatError(f"不是有效的 pcap 文件（magic=0x{magic:08x}）") from None


def open_capture(path: str | Path) -> list[RawPacket]:
    """Read every record of a pcap file, in file order.

    Ordinals are 1-based and count every record, including zero-length ones
    (which are skipped).
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < GLOBAL_HEADER_LEN:
        raise CaptureFormatError(f"{path}: pcap 全局头不完整")
    fmt = _detect_format(data[:4])
    link_type = LinkType.from_linktype(fmt.file_header(data[:GLOBAL_HEADER_LEN]).linktype)

    packets: list[RawPacket] = []
    offset = GLOBAL_HEADER_LEN
    ordinal = 0
    while offset < len(data):
        ordinal += 1
        if offset + RECORD_HEADER_LEN > len(data):
            raise CaptureFormatError(f"{path}: 第 {ordinal} 个报文头被截断", ordinal)
        record = fmt.record_header(data[offset : offset + RECORD_HEADER_LEN])
        offset += RECORD_HEADER_LEN
        if offset + record.caplen > len(data):
            raise CaptureFormatError(
                f"{path}: 第 {ordinal} 个报文声明长度 {record.caplen} 超出文件剩余字节", ordinal
            )
        frame = data[offset : offset + record.caplen]
        offset += record.caplen
        if not frame:
            logger.debug("%s: skipping empty record %d", path, ordinal)
            continue
        packets.append(
            RawPacket(
                timestamp=record.tv_sec + record.tv_usec / fmt.ticks_per_sec,
                link_type=link_type,
                data=frame,
                ordinal=ordinal,
            )
        )
    logger.info("%s: read %d packets (link type %s)", path, len(packets), link_type.value)
    return packets


def write_capture(
    path: str | Path,
    packets: Iterable[RawPacket],
    link_type: LinkType = LinkType.ETHERNET,
) -> int:
    """Write ``packets`` as a microsecond pcap in native byte order; returns the record count."""
    count = 0
    with Path(path).open("wb") as fh:
        writer = dpkt.pcap.Writer(fh, snaplen=SNAPLEN, linktype=link_type.linktype)
        for packet in packets:
            writer.writepkt(packet.data, ts=packet.timestamp)
            count += 1
    return count
