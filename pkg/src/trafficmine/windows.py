"""Fixed-length packet windows and their feature vectors."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import groupby
from typing import Iterator, List, Sequence, Tuple

from .ingest import C_TO_S, PacketRecord

FEATURE_NAMES = ("avg_payload", "n_servers", "n_user_ports",
                 "n_ack", "n_syn", "n_fin", "n_psh", "n_rst")

WINDOW_CSV_HEADER = "window_index,session_number," + ",".join(FEATURE_NAMES)


@dataclass(frozen=True)
class WindowConfig:
    window_length: int

    def __post_init__(self):
        if self.window_length < 2:
            raise ValueError(f"window_length must be >= 2, got {self.window_length}")


@dataclass(frozen=True)
class WindowStats:
    """Feature vector of one window, in FEATURE_NAMES order."""

    window_index: int
    session_number: int
    features: Tuple[float, ...]


def window_groups(records: Sequence[PacketRecord], window_length: int
                  ) -> Iterator[Tuple[int, List[PacketRecord]]]:
    """Yield (session_number, packets) per whole window, in capture order.

    Windows never span sessions; trailing packets that do not fill a window
    are dropped per session.
    """
    for session, group in groupby(records, key=lambda r: r.session_number):
        chunk = list(group)
        for i in range(len(chunk) // window_length):
            yield session, chunk[i * window_length:(i + 1) * window_length]


def _window_features(packets: Sequence[PacketRecord]) -> Tuple[float, ...]:
    servers = set()
    user_ports = set()
    counts = {"ACK": 0, "SYN": 0, "FIN": 0, "PSH": 0, "RST": 0}
    payload_total = 0
    for p in packets:
        payload_total += p.payload_size
        if p.direction == C_TO_S:
            servers.add(p.destination_ip)
            user_ports.add(p.source_port)
        else:
            servers.add(p.source_ip)
            user_ports.add(p.destination_port)
        for f in counts:
            if f in p.tcp_flags:
                counts[f] += 1
    return (payload_total / len(packets),
            float(len(servers)), float(len(user_ports)),
            float(counts["ACK"]), float(counts["SYN"]), float(counts["FIN"]),
            float(counts["PSH"]), float(counts["RST"]))


def extract_windows(records: Sequence[PacketRecord], cfg: WindowConfig
                    ) -> List[WindowStats]:
    """Consecutive non-overlapping windows of cfg.window_length packets."""
    stats = []
    for widx, (session, packets) in enumerate(window_groups(records, cfg.window_length)):
        stats.append(WindowStats(window_index=widx, session_number=session,
                                 features=_window_features(packets)))
    return stats


def write_window_csv(stats: Sequence[WindowStats]) -> str:
    lines = [WINDOW_CSV_HEADER]
    for w in stats:
        lines.append(",".join([str(w.window_index), str(w.session_number)]
                              + [repr(x) for x in w.features]))
    return "\n".join(lines) + "\n"


def read_window_csv(text: str) -> List[WindowStats]:
    lines = text.splitlines()
    if not lines or lines[0] != WINDOW_CSV_HEADER:
        raise ValueError("missing or wrong window CSV header")
    stats = []
    for line in lines[1:]:
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 2 + len(FEATURE_NAMES):
            raise ValueError(f"expected {2 + len(FEATURE_NAMES)} fields: {line!r}")
        stats.append(WindowStats(window_index=int(fields[0]),
                                 session_number=int(fields[1]),
                                 features=tuple(float(x) for x in fields[2:])))
    return stats
