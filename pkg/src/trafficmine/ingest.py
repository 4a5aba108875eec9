"""Classic pcap decoding and the canonical TCP packet record format.

Only classic pcap (magic 0xa1b2c3d4, either byte order) with Ethernet II
link type is supported; pcapng is out of scope. Non-IPv4 and non-TCP frames
are skipped and counted, never errors.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .errors import TrafficMineError
from .eventlog import flags_to_string, parse_flag_string

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
ETHERTYPE_IPV4 = 0x0800
IPPROTO_TCP = 6

# TCP flag bits, RFC 793 order within the flags byte.
TCP_FLAG_BITS = (
    ("FIN", 0x01),
    ("SYN", 0x02),
    ("RST", 0x04),
    ("PSH", 0x08),
    ("ACK", 0x10),
    ("URG", 0x20),
)

C_TO_S = "C_to_S"
S_TO_C = "S_to_C"

CANONICAL_HEADER = ("timestamp,direction,source_ip,source_port,"
                    "destination_ip,destination_port,session_number,"
                    "tcp_flag,payload_size")


class UnsupportedMagic(TrafficMineError):
    pass


class TruncatedHeader(TrafficMineError):
    pass


class UnsupportedLinkType(TrafficMineError):
    pass


class TruncatedRecord(TrafficMineError):
    pass


class AmbiguousDirection(TrafficMineError):
    pass


class MalformedRow(TrafficMineError):
    pass


@dataclass(frozen=True)
class RawTcpPacket:
    """One decoded TCP packet, prior to direction resolution."""

    ts_sec: int
    ts_usec: int
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    flags: frozenset
    payload_size: int

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec / 1e6


@dataclass(frozen=True)
class PacketRecord:
    """Canonical per-packet record; the unit every later stage consumes."""

    timestamp: float
    direction: str
    source_ip: str
    source_port: int
    destination_ip: str
    destination_port: int
    session_number: int
    tcp_flags: frozenset
    payload_size: int


@dataclass(frozen=True)
class ClientSpec:
    """Which endpoint is the client: a host address or a CIDR network."""

    network: ipaddress.IPv4Network

    @classmethod
    def parse(cls, text: str) -> "ClientSpec":
        try:
            net = ipaddress.IPv4Network(text, strict=False)
        except ValueError as e:
            raise MalformedRow(f"bad client spec {text!r}: {e}") from e
        return cls(network=net)

    def matches(self, ip: str) -> bool:
        return ipaddress.IPv4Address(ip) in self.network


@dataclass
class PcapParseResult:
    packets: List[RawTcpPacket]
    skipped_frames: int
    total_frames: int


def _flags_from_byte(b: int) -> frozenset:
    return frozenset(name for name, bit in TCP_FLAG_BITS if b & bit)


def _flag_byte(flags) -> int:
    return sum(bit for name, bit in TCP_FLAG_BITS if name in flags)


def parse_pcap(data: bytes) -> PcapParseResult:
    """Decode a classic pcap byte string into TCP packets.

    Frames that are not Ethernet II / IPv4 / TCP are skipped and counted.
    Structural damage (short headers, impossible lengths) raises instead.
    """
    if len(data) < 24:
        raise TruncatedHeader(f"global header needs 24 bytes, got {len(data)}")
    magic_be = struct.unpack(">I", data[:4])[0]
    if magic_be == PCAP_MAGIC:
        endian = ">"
    elif struct.unpack("<I", data[:4])[0] == PCAP_MAGIC:
        endian = "<"
    else:
        raise UnsupportedMagic(f"magic 0x{magic_be:08x} is not classic pcap")
    network = struct.unpack(endian + "I", data[20:24])[0]
    if network != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {network}, only Ethernet (1) supported")

    packets: List[RawTcpPacket] = []
    skipped = 0
    total = 0
    off = 24
    rec_hdr = struct.Struct(endian + "IIII")
    while off < len(data):
        if len(data) - off < 16:
            raise TruncatedRecord(f"record header at offset {off} is incomplete")
        ts_sec, ts_usec, incl_len, _orig_len = rec_hdr.unpack_from(data, off)
        off += 16
        if len(data) - off < incl_len:
            raise TruncatedRecord(
                f"record at offset {off - 16} claims {incl_len} bytes, "
                f"{len(data) - off} remain")
        frame = data[off:off + incl_len]
        off += incl_len
        total += 1
        pkt = _parse_frame(frame, ts_sec, ts_usec)
        if pkt is None:
            skipped += 1
        else:
            packets.append(pkt)
    return PcapParseResult(packets=packets, skipped_frames=skipped, total_frames=total)


def _parse_frame(frame: bytes, ts_sec: int, ts_usec: int):
    """Ethernet II -> IPv4 -> TCP. Returns None for frames to skip."""
    if len(frame) < 14:
        return None
    ethertype = struct.unpack(">H", frame[12:14])[0]
    if ethertype != ETHERTYPE_IPV4:
        return None
    ip = frame[14:]
    if len(ip) < 1:
        return None
    version = ip[0] >> 4
    if version != 4:
        return None
    if len(ip) < 20:
        raise TruncatedRecord("IPv4 header shorter than 20 bytes")
    ihl = (ip[0] & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        raise TruncatedRecord(f"IPv4 header length {ihl} does not fit frame")
    total_length = struct.unpack(">H", ip[2:4])[0]
    proto = ip[9]
    if proto != IPPROTO_TCP:
        return None
    src_ip = str(ipaddress.IPv4Address(ip[12:16]))
    dst_ip = str(ipaddress.IPv4Address(ip[16:20]))
    tcp = ip[ihl:]
    if len(tcp) < 20:
        raise TruncatedRecord("TCP header shorter than 20 bytes")
    src_port, dst_port = struct.unpack(">HH", tcp[0:4])
    data_offset = (tcp[12] >> 4) * 4
    if data_offset < 20 or len(tcp) < data_offset:
        raise TruncatedRecord(f"TCP data offset {data_offset} does not fit frame")
    payload_size = total_length - ihl - data_offset
    if payload_size < 0:
        raise TruncatedRecord(
            f"IP total length {total_length} implies negative TCP payload")
    return RawTcpPacket(ts_sec=ts_sec, ts_usec=ts_usec,
                        src_ip=src_ip, src_port=src_port,
                        dst_ip=dst_ip, dst_port=dst_port,
                        flags=_flags_from_byte(tcp[13]),
                        payload_size=payload_size)


def to_packet_records(packets: Sequence[RawTcpPacket], client: ClientSpec,
                      session_number: int) -> List[PacketRecord]:
    """Resolve direction against the client spec and stamp the session number."""
    records = []
    for i, p in enumerate(packets):
        src_is_client = client.matches(p.src_ip)
        dst_is_client = client.matches(p.dst_ip)
        if src_is_client == dst_is_client:
            which = "both" if src_is_client else "neither"
            raise AmbiguousDirection(
                f"packet {i}: {which} of {p.src_ip} -> {p.dst_ip} matches "
                f"client spec {client.network}")
        records.append(PacketRecord(
            timestamp=p.ts_sec + p.ts_usec / 1e6,
            direction=C_TO_S if src_is_client else S_TO_C,
            source_ip=p.src_ip, source_port=p.src_port,
            destination_ip=p.dst_ip, destination_port=p.dst_port,
            session_number=session_number,
            tcp_flags=p.flags, payload_size=p.payload_size))
    return records


def out_of_order_count(records: Sequence[PacketRecord]) -> int:
    """Timestamp regressions within a session; tolerated but worth a warning."""
    count = 0
    last: dict = {}
    for r in records:
        prev = last.get(r.session_number)
        if prev is not None and r.timestamp < prev:
            count += 1
        last[r.session_number] = r.timestamp
    return count


def write_canonical(records: Sequence[PacketRecord]) -> str:
    """Canonical CSV with a fixed header and 6-fractional-digit timestamps."""
    lines = [CANONICAL_HEADER]
    for r in records:
        lines.append(",".join((
            f"{r.timestamp:.6f}", r.direction,
            r.source_ip, str(r.source_port),
            r.destination_ip, str(r.destination_port),
            str(r.session_number), flags_to_string(r.tcp_flags),
            str(r.payload_size))))
    return "\n".join(lines) + "\n"


def read_canonical(text: str) -> List[PacketRecord]:
    """Parse canonical CSV; MalformedRow carries the offending line number."""
    lines = text.splitlines()
    if not lines or lines[0] != CANONICAL_HEADER:
        raise MalformedRow("missing or wrong canonical header")
    records = []
    for n, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 9:
            raise MalformedRow(f"line {n}: expected 9 fields, got {len(fields)}")
        try:
            ts = float(fields[0])
            direction = fields[1]
            if direction not in (C_TO_S, S_TO_C):
                raise ValueError(f"bad direction {direction!r}")
            src_ip = str(ipaddress.IPv4Address(fields[2]))
            src_port = int(fields[3])
            dst_ip = str(ipaddress.IPv4Address(fields[4]))
            dst_port = int(fields[5])
            session = int(fields[6])
            flags = parse_flag_string(fields[7])
            payload = int(fields[8])
            if payload < 0 or not (0 <= src_port <= 65535) or not (0 <= dst_port <= 65535):
                raise ValueError("out-of-range numeric field")
        except ValueError as e:
            raise MalformedRow(f"line {n}: {e}") from e
        records.append(PacketRecord(
            timestamp=ts, direction=direction,
            source_ip=src_ip, source_port=src_port,
            destination_ip=dst_ip, destination_port=dst_port,
            session_number=session, tcp_flags=flags, payload_size=payload))
    return records


def _split_timestamp(t: float) -> Tuple[int, int]:
    sec = int(t)
    usec = round((t - sec) * 1e6)
    if usec >= 1_000_000:
        sec += 1
        usec -= 1_000_000
    return sec, usec


def write_pcap(records: Sequence[PacketRecord]) -> bytes:
    """Encode records as a little-endian classic pcap with Ethernet/IPv4/TCP.

    Sequence numbers, checksums, and MACs are synthetic; the decoder ignores
    them. parse_pcap(write_pcap(r)) reproduces every canonical field.
    """
    out = [struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET)]
    eth = b"\x00\x00\x00\x00\x00\x02" + b"\x00\x00\x00\x00\x00\x01" + struct.pack(">H", ETHERTYPE_IPV4)
    for r in records:
        payload = b"\x00" * r.payload_size
        total_length = 20 + 20 + r.payload_size
        ip = struct.pack(">BBHHHBBH4s4s",
                         0x45, 0, total_length, 0, 0, 64, IPPROTO_TCP, 0,
                         ipaddress.IPv4Address(r.source_ip).packed,
                         ipaddress.IPv4Address(r.destination_ip).packed)
        tcp = struct.pack(">HHIIBBHHH",
                          r.source_port, r.destination_port, 0, 0,
                          5 << 4, _flag_byte(r.tcp_flags), 65535, 0, 0)
        frame = eth + ip + tcp + payload
        sec, usec = _split_timestamp(r.timestamp)
        out.append(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out)
