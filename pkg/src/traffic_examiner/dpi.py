"""S(2): label unencrypted benign traffic by payload signature, then by port."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from .preprocess import FiveTuple


class Evidence(Enum):
    PORT_MATCH = "port-match"
    SIGNATURE_MATCH = "signature-match"
    UNKNOWN = "unknown"


UNKNOWN_APP = "Unknown"


@dataclass(frozen=True)
class AppLabel:
    name: str
    evidence: Evidence

    def __post_init__(self) -> None:
        if (self.evidence is Evidence.UNKNOWN) != (self.name == UNKNOWN_APP):
            raise ValueError("evidence 为 unknown 当且仅当应用名为 Unknown")

    def to_dict(self) -> dict:
        return {"name": self.name, "evidence": self.evidence.value}


# IANA well-known / registered ports
WELL_KNOWN_PORTS: dict[int, str] = {
    20: "FTP-Data",
    21: "FTP",
    22: "SSH",
    23: "Telnet",
    25: "SMTP/Email",
    53: "DNS",
    67: "DHCP",
    68: "DHCP",
    69: "TFTP",
    80: "HTTP",
    110: "POP3/Email",
    123: "NTP",
    137: "NetBIOS",
    143: "IMAP/Email",
    161: "SNMP",
    162: "SNMP",
    389: "LDAP",
    443: "HTTPS",
    445: "SMB",
    465: "SMTPS/Email",
    514: "Syslog",
    587: "SMTP/Email",
    993: "IMAPS/Email",
    995: "POP3S/Email",
    1900: "SSDP",
    3306: "MySQL",
    3389: "RDP",
    5060: "SIP",
    5353: "mDNS",
    5432: "PostgreSQL",
    5900: "VNC",
    6379: "Redis",
    8080: "HTTP-Alt",
}

_HTTP_METHODS = (b"GET ", b"POST ", b"PUT ", b"DELETE ", b"HEAD ", b"OPTIONS ", b"PATCH ", b"CONNECT ", b"TRACE ")


def _http(meta: FiveTuple, payload: bytes) -> bool:
    return payload.startswith(_HTTP_METHODS) or payload.startswith(b"HTTP/1.")


def _smtp(meta: FiveTuple, payload: bytes) -> bool:
    return payload.startswith((b"220 ", b"HELO ", b"EHLO ", b"MAIL FROM:"))


def _tls(meta: FiveTuple, payload: bytes) -> bool:
    # record type 0x16 (handshake), major version 3
    return len(payload) >= 5 and payload[0] == 0x16 and payload[1] == 0x03


def _dns(meta: FiveTuple, payload: bytes) -> bool:
    if 53 not in (meta.sport, meta.dport) or len(payload) < 12:
        return False
    flags, qdcount = struct.unpack_from("!HH", payload, 2)
    opcode = (flags >> 11) & 0x0F
    return opcode <= 2 and 1 <= qdcount <= 16


# Checked in order; first match wins.
SIGNATURES: tuple[tuple[str, Callable[[FiveTuple, bytes], bool]], ...] = (
    ("HTTP", _http),
    ("SMTP/Email", _smtp),
    ("TLS", _tls),
    ("DNS", _dns),
)


def s2_port_dpi(meta: Optional[FiveTuple], payload_prefix: bytes) -> AppLabel:
    if meta is None:
        meta = FiveTuple("0.0.0.0", "0.0.0.0", 0, 0, "TCP")
    for name, matches in SIGNATURES:
        if matches(meta, payload_prefix):
            return AppLabel(name, Evidence.SIGNATURE_MATCH)
    for port in (meta.dport, meta.sport):
        if port in WELL_KNOWN_PORTS:
            return AppLabel(WELL_KNOWN_PORTS[port], Evidence.PORT_MATCH)
    return AppLabel(UNKNOWN_APP, Evidence.UNKNOWN)
