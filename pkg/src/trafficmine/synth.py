"""Deterministic synthetic gaming-traffic generator.

Two built-in behavioral profiles:

* ``pushburst``: sequential flows of client push bursts, each burst closed by
  a single server push. Every flow segment (handshake, burst, teardown) has a
  packet count divisible by 3, so window lengths of 3 phase-lock onto the
  grammar when session budgets are multiples of 3.
* ``stream``: two interleaved flows per session; the server sends bulk ACK
  runs, the client answers with bare ACKs that rarely carry PSH.

A ``distinctness`` scalar interpolates profile parameters between the two,
giving a controlled knob from a statistical null case (0) to fully distinct
cohorts (1).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import TrafficMineError
from .ingest import PacketRecord

HANDSHAKE_LEN = 3
TEARDOWN_LEN = 3
EPHEMERAL_BASE = 49152
BASE_EPOCH = 1_700_000_000
SESSION_SPACING_S = 10_000
MAX_PAYLOAD = 1460


class InvalidSpec(TrafficMineError):
    """Profile or device specification violates an invariant."""


@dataclass(frozen=True)
class GameProfile:
    """Grammar parameters for one synthetic game.

    ``burst_geom_p`` is the geometric parameter shaping data-run lengths:
    pushburst bursts carry 3*(g+1) packets with g ~ Geom(p)-1, stream server
    runs carry r ~ Geom(p) packets. ``data_psh_prob`` is the chance a data
    packet carries PSH (pushburst data = burst packets, stream data = client
    replies); together with the fixed handshake/teardown flags it determines
    the profile's flag mix, see expected_flag_mix().
    """

    name: str
    kind: str  # "pushburst" or "stream"
    burst_geom_p: float
    bursts_per_flow: int
    client_payload: Tuple[float, float]  # lognormal (mu, sigma)
    server_payload: Tuple[float, float]
    data_psh_prob: float
    server_pool_size: int
    server_port: int
    client_port_churn: float
    concurrency: int

    def __post_init__(self) -> None:
        if self.kind not in ("pushburst", "stream"):
            raise InvalidSpec(f"unknown profile kind {self.kind!r}")
        if not 0.0 < self.burst_geom_p <= 1.0:
            raise InvalidSpec("burst_geom_p must be in (0, 1]")
        if self.bursts_per_flow < 1:
            raise InvalidSpec("bursts_per_flow must be >= 1")
        if not 0.0 <= self.data_psh_prob <= 1.0:
            raise InvalidSpec("data_psh_prob must be a probability")
        if not 0.0 <= self.client_port_churn <= 1.0:
            raise InvalidSpec("client_port_churn must be a probability")
        if self.server_pool_size < 1:
            raise InvalidSpec("server_pool_size must be >= 1")
        if self.concurrency < 1:
            raise InvalidSpec("concurrency must be >= 1")


PUSHBURST = GameProfile(
    name="pushburst", kind="pushburst", burst_geom_p=0.5, bursts_per_flow=8,
    client_payload=(5.5, 0.8), server_payload=(5.5, 0.8), data_psh_prob=1.0,
    server_pool_size=4, server_port=7777, client_port_churn=1.0, concurrency=1)

STREAM = GameProfile(
    name="stream", kind="stream", burst_geom_p=0.4, bursts_per_flow=16,
    client_payload=(4.0, 0.5), server_payload=(6.5, 0.5), data_psh_prob=0.04,
    server_pool_size=2, server_port=8443, client_port_churn=1.0, concurrency=2)

BUILTIN_PROFILES = {"pushburst": PUSHBURST, "stream": STREAM}


def expected_flow_length(profile: GameProfile) -> float:
    """Mean packets per flow under the profile grammar."""
    if profile.kind == "pushburst":
        # burst = 3*(g+1) packets, E[g] = 1/p - 1, so E[burst] = 3/p
        data = profile.bursts_per_flow * 3.0 / profile.burst_geom_p
    else:
        # round = r server packets + 1 client reply, E[r] = 1/p
        data = profile.bursts_per_flow * (1.0 / profile.burst_geom_p + 1.0)
    return HANDSHAKE_LEN + data + TEARDOWN_LEN


def expected_flag_mix(profile: GameProfile) -> Dict[str, float]:
    """Long-run per-flag packet fractions implied by the grammar.

    Renewal-reward over flows: fraction = E[count per flow] / E[flow length].
    """
    total = expected_flow_length(profile)
    data = total - HANDSHAKE_LEN - TEARDOWN_LEN
    if profile.kind == "pushburst":
        psh = data * profile.data_psh_prob
    else:
        # only the one client reply per round may carry PSH
        psh = profile.bursts_per_flow * profile.data_psh_prob
    return {
        "SYN": 2.0 / total,
        "ACK": (total - 1.0) / total,  # every packet but the opening SYN
        "PSH": psh / total,
        "FIN": 2.0 / total,
        "RST": 0.0,
        "URG": 0.0,
    }


def blend(a: GameProfile, b: GameProfile, t: float) -> GameProfile:
    """Interpolate numeric parameters between two profiles.

    t = 0 returns a, t = 1 returns b; the discrete grammar kind (and port)
    comes from whichever endpoint is nearer.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidSpec("blend parameter must be in [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    near = a if t < 0.5 else b

    def lerp(x: float, y: float) -> float:
        return x + t * (y - x)

    return GameProfile(
        name=f"{a.name}~{b.name}@{t:g}",
        kind=near.kind,
        burst_geom_p=lerp(a.burst_geom_p, b.burst_geom_p),
        bursts_per_flow=max(1, round(lerp(a.bursts_per_flow, b.bursts_per_flow))),
        client_payload=(lerp(a.client_payload[0], b.client_payload[0]),
                        lerp(a.client_payload[1], b.client_payload[1])),
        server_payload=(lerp(a.server_payload[0], b.server_payload[0]),
                        lerp(a.server_payload[1], b.server_payload[1])),
        data_psh_prob=lerp(a.data_psh_prob, b.data_psh_prob),
        server_pool_size=max(1, round(lerp(a.server_pool_size, b.server_pool_size))),
        server_port=near.server_port,
        client_port_churn=lerp(a.client_port_churn, b.client_port_churn),
        concurrency=max(1, round(lerp(a.concurrency, b.concurrency))),
    )


def profile_to_json(profile: GameProfile) -> dict:
    out = {}
    for f in fields(GameProfile):
        v = getattr(profile, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def profile_from_json(doc: Mapping) -> GameProfile:
    kwargs = dict(doc)
    for key in ("client_payload", "server_payload"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return GameProfile(**kwargs)
    except TypeError as exc:
        raise InvalidSpec(f"bad profile document: {exc}") from None


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    profile: GameProfile
    session_budgets: Tuple[int, ...]
    seed: int
    client_ip: str = "10.0.0.2"
    server_ips: Optional[Tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if not self.device_id:
            raise InvalidSpec("device_id must be non-empty")
        if not self.session_budgets:
            raise InvalidSpec("need at least one session")
        if any(b < 1 for b in self.session_budgets):
            raise InvalidSpec("session packet budgets must be >= 1")
        if self.server_ips is not None and \
                len(self.server_ips) < self.profile.server_pool_size:
            raise InvalidSpec("server_ips smaller than server_pool_size")

    def servers(self) -> Tuple[str, ...]:
        if self.server_ips is not None:
            return self.server_ips[:self.profile.server_pool_size]
        return tuple(f"52.10.0.{i + 1}"
                     for i in range(self.profile.server_pool_size))


# A flow packet before timing/addressing: (direction, flags, payload_size,
# server_ip, client_port). Directions follow the canonical record vocabulary.
_Proto = Tuple[str, frozenset, int, str, int]


def _payload(rng: np.random.Generator, params: Tuple[float, float]) -> int:
    mu, sigma = params
    return max(1, min(MAX_PAYLOAD, int(round(rng.lognormal(mu, sigma)))))


def _spread(total: int, parts: int) -> List[int]:
    base, extra = divmod(total, parts)
    return [base + 1] * extra + [base] * (parts - extra)


def _pushburst_flow(rng: np.random.Generator, profile: GameProfile,
                    extras: Sequence[int], server: str,
                    cport: int) -> List[_Proto]:
    f = frozenset
    out: List[_Proto] = [
        ("C_to_S", f({"SYN"}), 0, server, cport),
        ("S_to_C", f({"SYN", "ACK"}), 0, server, cport),
        ("C_to_S", f({"ACK"}), 0, server, cport),
    ]
    for g in extras:
        for _ in range(3 * g + 2):
            flags = {"ACK"}
            if rng.random() < profile.data_psh_prob:
                flags.add("PSH")
            out.append(("C_to_S", f(flags), _payload(rng, profile.client_payload),
                        server, cport))
        flags = {"ACK"}
        if rng.random() < profile.data_psh_prob:
            flags.add("PSH")
        out.append(("S_to_C", f(flags), _payload(rng, profile.server_payload),
                    server, cport))
    out.extend([
        ("C_to_S", f({"FIN", "ACK"}), 0, server, cport),
        ("S_to_C", f({"FIN", "ACK"}), 0, server, cport),
        ("C_to_S", f({"ACK"}), 0, server, cport),
    ])
    return out


def _stream_flow(rng: np.random.Generator, profile: GameProfile, server: str,
                 cport: int) -> List[_Proto]:
    f = frozenset
    out: List[_Proto] = [
        ("C_to_S", f({"SYN"}), 0, server, cport),
        ("S_to_C", f({"SYN", "ACK"}), 0, server, cport),
        ("C_to_S", f({"ACK"}), 0, server, cport),
    ]
    for _ in range(profile.bursts_per_flow):
        run = int(rng.geometric(profile.burst_geom_p))
        for _ in range(run):
            out.append(("S_to_C", f({"ACK"}),
                        _payload(rng, profile.server_payload), server, cport))
        if rng.random() < profile.data_psh_prob:
            out.append(("C_to_S", f({"ACK", "PSH"}),
                        _payload(rng, profile.client_payload), server, cport))
        else:
            out.append(("C_to_S", f({"ACK"}), 0, server, cport))
    out.extend([
        ("C_to_S", f({"FIN", "ACK"}), 0, server, cport),
        ("S_to_C", f({"FIN", "ACK"}), 0, server, cport),
        ("C_to_S", f({"ACK"}), 0, server, cport),
    ])
    return out


class _PortAllocator:
    def __init__(self, rng: np.random.Generator, churn: float) -> None:
        self.rng = rng
        self.churn = churn
        self.port = EPHEMERAL_BASE

    def next_flow_port(self) -> int:
        if self.port == EPHEMERAL_BASE or self.rng.random() < self.churn:
            self.port += 1
            if self.port > 65535:
                self.port = EPHEMERAL_BASE + 1
        return self.port


def _pushburst_session(rng: np.random.Generator, spec: DeviceSpec,
                       budget: int, ports: _PortAllocator) -> List[_Proto]:
    """Sequential flows; budgets that are multiples of 3 (and >= one minimal
    flow) are filled exactly on flow boundaries, keeping mod-3 phase."""
    profile = spec.profile
    servers = spec.servers()
    min_flow = HANDSHAKE_LEN + 3 * profile.bursts_per_flow + TEARDOWN_LEN
    out: List[_Proto] = []
    while len(out) < budget:
        rem = budget - len(out)
        extras = [int(g) - 1 for g in
                  rng.geometric(profile.burst_geom_p, size=profile.bursts_per_flow)]
        flow_len = min_flow + 3 * sum(extras)
        if rem % 3 == 0 and rem >= min_flow and \
                (flow_len > rem or rem - flow_len < min_flow):
            extras = _spread((rem - min_flow) // 3, profile.bursts_per_flow)
        server = servers[int(rng.integers(len(servers)))]
        out.extend(_pushburst_flow(rng, profile, extras, server,
                                   ports.next_flow_port()))
    del out[budget:]
    return out


def _stream_session(rng: np.random.Generator, spec: DeviceSpec, budget: int,
                    ports: _PortAllocator) -> List[_Proto]:
    """`concurrency` flows interleaved by random turn-taking."""
    profile = spec.profile
    servers = spec.servers()
    active: List[Iterator[_Proto]] = []
    out: List[_Proto] = []
    while len(out) < budget:
        while len(active) < profile.concurrency:
            server = servers[int(rng.integers(len(servers)))]
            active.append(iter(_stream_flow(rng, profile, server,
                                            ports.next_flow_port())))
        idx = int(rng.integers(len(active)))
        try:
            out.append(next(active[idx]))
        except StopIteration:
            del active[idx]
    return out


def generate_device(spec: DeviceSpec) -> List[PacketRecord]:
    """Deterministic per-device capture: exact budgets, strictly increasing
    microsecond-grid timestamps, sessions spaced well apart."""
    rng = np.random.default_rng(spec.seed)
    ports = _PortAllocator(rng, spec.profile.client_port_churn)
    session_fn = (_pushburst_session if spec.profile.kind == "pushburst"
                  else _stream_session)
    records: List[PacketRecord] = []
    for snum, budget in enumerate(spec.session_budgets, start=1):
        protos = session_fn(rng, spec, budget, ports)
        gaps = rng.integers(200, 5001, size=len(protos))
        t_us = (BASE_EPOCH + (snum - 1) * SESSION_SPACING_S) * 1_000_000
        for proto, gap in zip(protos, gaps):
            t_us += int(gap)
            direction, flags, payload, server, cport = proto
            if direction == "C_to_S":
                src_ip, src_port = spec.client_ip, cport
                dst_ip, dst_port = server, spec.profile.server_port
            else:
                src_ip, src_port = server, spec.profile.server_port
                dst_ip, dst_port = spec.client_ip, cport
            records.append(PacketRecord(
                timestamp=t_us / 1e6, direction=direction,
                source_ip=src_ip, source_port=src_port,
                destination_ip=dst_ip, destination_port=dst_port,
                session_number=snum, tcp_flags=flags, payload_size=payload))
    return records


def make_specs(profile_counts: Sequence[Tuple[GameProfile, int]], seed: int,
               session_budgets: Tuple[int, ...]) -> List[DeviceSpec]:
    """Cohort specs with per-device derived seeds and distinct address space."""
    n = sum(count for _, count in profile_counts)
    if n < 1:
        raise InvalidSpec("cohort must contain at least one device")
    child_seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    specs: List[DeviceSpec] = []
    i = 0
    for profile, count in profile_counts:
        for _ in range(count):
            specs.append(DeviceSpec(
                device_id=f"d{i + 1}", profile=profile,
                session_budgets=tuple(session_budgets),
                seed=int(child_seeds[i]),
                client_ip=f"10.0.{i + 1}.2",
                server_ips=tuple(f"52.10.{i + 1}.{j + 1}"
                                 for j in range(profile.server_pool_size))))
            i += 1
    return specs


def generate_cohort(specs: Sequence[DeviceSpec]) -> Dict[str, List[PacketRecord]]:
    return {spec.device_id: generate_device(spec) for spec in specs}


# Budgets: 5025 = 201 * 25 keeps 1% segments (201 packets at 20100/device)
# aligned with both session boundaries and window length 3; 3000 likewise
# is a multiple of 3 for the smaller single-game cohort.
_FULL_BUDGETS = (5025, 5025, 5025, 5025)
_SMALL_BUDGETS = (3000, 3000)


def builtin_specs(name: str, seed: int,
                  distinctness: float = 1.0) -> List[DeviceSpec]:
    """Named cohorts used by the experiment suites.

    two-games: 8 pushburst + 4 foreign devices, the foreign profile blended
    from pushburst (distinctness 0) to stream (1). one-game: 4 pushburst
    devices at a smaller budget. null-case: 12 pushburst devices.
    """
    if name == "two-games":
        foreign = blend(PUSHBURST, STREAM, distinctness)
        return make_specs([(PUSHBURST, 8), (foreign, 4)], seed, _FULL_BUDGETS)
    if name == "one-game":
        return make_specs([(PUSHBURST, 4)], seed, _SMALL_BUDGETS)
    if name == "null-case":
        return make_specs([(PUSHBURST, 12)], seed, _FULL_BUDGETS)
    raise InvalidSpec(f"unknown cohort {name!r}; "
                      f"expected two-games, one-game, or null-case")


COHORT_NAMES = ("two-games", "one-game", "null-case")
