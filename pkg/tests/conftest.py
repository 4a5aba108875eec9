"""Shared fixtures: record factories, process-tree builders, trace playout,
and an independent optimal-alignment oracle over the explicit synchronous
product graph (networkx shortest path, nothing shared with the search code).
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import networkx as nx
import numpy as np

from trafficmine.discovery import (ProcessTree, SILENT, leaf, silent_leaf,
                                   tree)
from trafficmine.ingest import PacketRecord
from trafficmine.petri import PetriNet

CLIENT_IP = "10.0.0.2"
SERVER_IP = "52.10.0.1"


def make_record(timestamp=1_700_000_000.0, direction="C_to_S",
                session_number=1, tcp_flags=("ACK",), payload_size=100,
                source_port=50001, destination_port=7777) -> PacketRecord:
    if direction == "C_to_S":
        src, dst = CLIENT_IP, SERVER_IP
        sport, dport = source_port, destination_port
    else:
        src, dst = SERVER_IP, CLIENT_IP
        sport, dport = destination_port, source_port
    return PacketRecord(timestamp=timestamp, direction=direction,
                        source_ip=src, source_port=sport,
                        destination_ip=dst, destination_port=dport,
                        session_number=session_number,
                        tcp_flags=frozenset(tcp_flags),
                        payload_size=payload_size)


def record_run(labels: Sequence[Tuple[str, Sequence[str], int]],
               session_number=1, t0=1_700_000_000.0) -> List[PacketRecord]:
    """Records from (direction, flags, payload) triples, 1 ms apart."""
    return [make_record(timestamp=t0 + i * 0.001, direction=d,
                        session_number=session_number, tcp_flags=flags,
                        payload_size=payload)
            for i, (d, flags, payload) in enumerate(labels)]


# ------------------------------------------------------------ process trees


def fixed_depth3_trees() -> List[ProcessTree]:
    """A fixed enumeration of process trees of depth <= 3 covering every
    operator alone and in combination; used by the rediscovery suite."""
    a, b, c, d = (leaf(x) for x in "abcd")
    t = silent_leaf
    return [
        leaf("a"),
        tree("SEQ", a, b),
        tree("SEQ", a, b, c),
        tree("XOR", a, b),
        tree("XOR", a, b, c),
        tree("PAR", a, b),
        tree("PAR", a, b, c),
        tree("LOOP", a, b),
        tree("LOOP", a, b, c),
        tree("XOR", a, t()),
        tree("SEQ", a, tree("XOR", b, c)),
        tree("SEQ", tree("XOR", a, b), c),
        tree("XOR", tree("SEQ", a, b), c),
        tree("SEQ", a, tree("PAR", b, c)),
        tree("PAR", tree("SEQ", a, b), c),
        tree("LOOP", tree("SEQ", a, b), c),
        tree("LOOP", a, tree("SEQ", b, c)),
        tree("SEQ", tree("LOOP", a, b), c),
        tree("SEQ", a, tree("LOOP", b, t())),
        tree("XOR", tree("PAR", a, b), tree("SEQ", c, d)),
        tree("PAR", tree("XOR", a, b), c),
        tree("SEQ", tree("XOR", a, t()), b),
        tree("LOOP", tree("XOR", a, b), c),
        tree("SEQ", a, b, tree("XOR", c, t())),
    ]


def playout(node: ProcessTree, rng: np.random.Generator,
            max_loops: int = 3) -> Tuple[str, ...]:
    """One random trace from the tree's language."""
    if node.is_leaf():
        return () if node.label is SILENT else (node.label,)
    if node.operator == "SEQ":
        out: Tuple[str, ...] = ()
        for child in node.children:
            out += playout(child, rng, max_loops)
        return out
    if node.operator == "XOR":
        pick = node.children[int(rng.integers(len(node.children)))]
        return playout(pick, rng, max_loops)
    if node.operator == "PAR":
        queues = [list(playout(ch, rng, max_loops)) for ch in node.children]
        out_l: List[str] = []
        while any(queues):
            live = [i for i, q in enumerate(queues) if q]
            out_l.append(queues[live[int(rng.integers(len(live)))]].pop(0))
        return tuple(out_l)
    # LOOP: do (redo do)*
    do, redos = node.children[0], node.children[1:]
    out = playout(do, rng, max_loops)
    for _ in range(int(rng.integers(0, max_loops + 1))):
        redo = redos[int(rng.integers(len(redos)))]
        out += playout(redo, rng, max_loops)
        out += playout(do, rng, max_loops)
    return out


def random_tree(rng: np.random.Generator, alphabet: Sequence[str],
                depth: int = 3) -> ProcessTree:
    if depth == 0 or rng.random() < 0.3:
        return leaf(alphabet[int(rng.integers(len(alphabet)))])
    op = ("SEQ", "XOR", "PAR", "LOOP")[int(rng.integers(4))]
    n = int(rng.integers(2, 4))
    kids = [random_tree(rng, alphabet, depth - 1) for _ in range(n)]
    return tree(op, *kids)


# ---------------------------------------------------- independent alignment


def _token_maps(net: PetriNet):
    """Pre/post sets rebuilt from the raw arc set."""
    pre: Dict[str, List[str]] = {t: [] for t in net.transitions}
    post: Dict[str, List[str]] = {t: [] for t in net.transitions}
    for src, dst in net.arcs:
        if src in net.transitions:
            post[src].append(dst)
        else:
            pre[dst].append(src)
    return pre, post


def alignment_optimum_oracle(trace: Sequence[str], net: PetriNet,
                             log_cost: int = 1, model_cost: int = 1) -> float:
    """Minimum alignment cost by materializing the whole synchronous product
    and running networkx Dijkstra over it."""
    pre, post = _token_maps(net)

    def fire(marking: frozenset, t: str) -> frozenset:
        m = dict(marking)
        for p in pre[t]:
            m[p] -= 1
        for p in post[t]:
            m[p] = m.get(p, 0) + 1
        return frozenset((p, n) for p, n in m.items() if n)

    def enabled(marking: frozenset) -> List[str]:
        m = dict(marking)
        return [t for t in net.transitions
                if all(m.get(p, 0) >= 1 for p in pre[t])]

    start = (frozenset(net.initial_marking.items()), 0)
    goal_marking = frozenset(net.final_marking.items())
    g = nx.DiGraph()
    g.add_node(start)
    frontier = [start]
    seen = {start}
    while frontier:
        node = frontier.pop()
        marking, pos = node
        if len(seen) > 200_000:
            raise RuntimeError("oracle product graph too large")
        succs = []
        if pos < len(trace):
            succs.append(((marking, pos + 1), log_cost))
        for t in enabled(marking):
            label = net.transitions[t]
            mc = 0 if label is None else model_cost
            succs.append(((fire(marking, t), pos), mc))
            if pos < len(trace) and label == trace[pos]:
                succs.append(((fire(marking, t), pos + 1), 0))
        for succ, cost in succs:
            if g.has_edge(node, succ):
                if g[node][succ]["cost"] <= cost:
                    continue
            g.add_edge(node, succ, cost=cost)
            if succ not in seen:
                seen.add(succ)
                frontier.append(succ)
    goal = (goal_marking, len(trace))
    return nx.shortest_path_length(g, start, goal, weight="cost")
