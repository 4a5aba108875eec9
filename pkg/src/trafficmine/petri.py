"""Labeled Petri nets with firing semantics, PNML I/O, and the arc-degree metric."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Set, Tuple

from .errors import TrafficMineError

Marking = Dict[str, int]


class UnknownPlace(TrafficMineError):
    pass


class NotEnabled(TrafficMineError):
    pass


class EmptyNet(TrafficMineError):
    pass


class MalformedPnml(TrafficMineError):
    pass


@dataclass(eq=False)
class PetriNet:
    """Immutable-by-convention place/transition net.

    transitions maps id -> label; a None label marks a silent transition.
    Arcs connect places to transitions or transitions to places, never peers.
    """

    places: FrozenSet[str]
    transitions: Dict[str, Optional[str]]
    arcs: FrozenSet[Tuple[str, str]]
    initial_marking: Marking
    final_marking: Marking
    _preset: Dict[str, Tuple[str, ...]] = field(init=False, repr=False)
    _postset: Dict[str, Tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        self.places = frozenset(self.places)
        self.arcs = frozenset(self.arcs)
        for src, dst in self.arcs:
            src_place, dst_place = src in self.places, dst in self.places
            src_trans, dst_trans = src in self.transitions, dst in self.transitions
            if not ((src_place and dst_trans) or (src_trans and dst_place)):
                raise ValueError(f"arc ({src}, {dst}) is not place<->transition")
        for m in (self.initial_marking, self.final_marking):
            for p, count in m.items():
                if p not in self.places:
                    raise UnknownPlace(f"marking references unknown place {p!r}")
                if count < 0:
                    raise ValueError(f"negative token count on {p!r}")
        pre: Dict[str, list] = {t: [] for t in self.transitions}
        post: Dict[str, list] = {t: [] for t in self.transitions}
        for src, dst in sorted(self.arcs):
            if dst in pre:
                pre[dst].append(src)
            else:
                post[src].append(dst)
        self._preset = {t: tuple(v) for t, v in pre.items()}
        self._postset = {t: tuple(v) for t, v in post.items()}

    def preset(self, t: str) -> Tuple[str, ...]:
        return self._preset[t]

    def postset(self, t: str) -> Tuple[str, ...]:
        return self._postset[t]


def enabled(net: PetriNet, marking: Marking) -> Set[str]:
    """Transitions whose every input place holds at least one token."""
    for p in marking:
        if p not in net.places:
            raise UnknownPlace(f"marking references unknown place {p!r}")
    return {t for t in net.transitions
            if all(marking.get(p, 0) >= 1 for p in net.preset(t))}


def fire(net: PetriNet, marking: Marking, t: str) -> Marking:
    """Consume one token per input place, produce one per output place."""
    if t not in net.transitions:
        raise NotEnabled(f"unknown transition {t!r}")
    pre = net.preset(t)
    if any(marking.get(p, 0) < 1 for p in pre):
        raise NotEnabled(f"transition {t!r} is not enabled")
    out = dict(marking)
    for p in pre:
        out[p] -= 1
        if out[p] == 0:
            del out[p]
    for p in net.postset(t):
        out[p] = out.get(p, 0) + 1
    return out


def marking_key(marking: Marking) -> Tuple[Tuple[str, int], ...]:
    return tuple(sorted(marking.items()))


def arc_degree(net: PetriNet) -> float:
    """1 / (1 + max(0, mean node degree - 2)); 1.0 means chain-like."""
    n_nodes = len(net.places) + len(net.transitions)
    if n_nodes == 0:
        raise EmptyNet("arc_degree of a net with no nodes")
    mean_degree = 2 * len(net.arcs) / n_nodes
    return 1.0 / (1.0 + max(0.0, mean_degree - 2.0))


def reachable_markings(net: PetriNet, limit: int = 100_000):
    """Bounded BFS over the marking graph; yields marking dicts."""
    start = dict(net.initial_marking)
    seen = {marking_key(start)}
    queue = [start]
    while queue:
        m = queue.pop(0)
        yield m
        for t in sorted(enabled(net, m)):
            nxt = fire(net, m, t)
            key = marking_key(nxt)
            if key not in seen:
                if len(seen) >= limit:
                    raise TrafficMineError(f"marking graph exceeds {limit} states")
                seen.add(key)
                queue.append(nxt)


def can_reach_final(net: PetriNet, limit: int = 100_000) -> bool:
    target = marking_key(net.final_marking)
    return any(marking_key(m) == target for m in reachable_markings(net, limit))


def export_pnml(net: PetriNet) -> str:
    """PNML subset: pnml/net/page with places (initialMarking), transitions, arcs.

    Silent transitions carry no name element.
    """
    root = ET.Element("pnml")
    net_el = ET.SubElement(root, "net", {
        "id": "net1", "type": "http://www.pnml.org/version-2009/grammar/ptnet"})
    page = ET.SubElement(net_el, "page", {"id": "page1"})
    for p in sorted(net.places):
        p_el = ET.SubElement(page, "place", {"id": p})
        tokens = net.initial_marking.get(p, 0)
        if tokens:
            m_el = ET.SubElement(p_el, "initialMarking")
            ET.SubElement(m_el, "text").text = str(tokens)
    for t in sorted(net.transitions):
        t_el = ET.SubElement(page, "transition", {"id": t})
        label = net.transitions[t]
        if label is not None:
            n_el = ET.SubElement(t_el, "name")
            ET.SubElement(n_el, "text").text = label
    for i, (src, dst) in enumerate(sorted(net.arcs)):
        ET.SubElement(page, "arc", {"id": f"a{i}", "source": src, "target": dst})
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def import_pnml(text: str) -> PetriNet:
    """Parse the PNML subset written by export_pnml.

    The final marking is not part of the format; it is inferred as one token
    on the unique sink place (workflow nets always have one).
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise MalformedPnml(f"not XML: {e}") from e
    tag = root.tag.split("}")[-1]
    net_el = root.find(".//net") if tag != "net" else root
    if tag == "pnml":
        net_el = root.find("net")
    if net_el is None:
        raise MalformedPnml("no <net> element")
    places = set()
    initial: Marking = {}
    transitions: Dict[str, Optional[str]] = {}
    arcs = set()
    for p_el in net_el.iter("place"):
        pid = p_el.get("id")
        if pid is None:
            raise MalformedPnml("place without id")
        places.add(pid)
        m_el = p_el.find("initialMarking/text")
        if m_el is not None and m_el.text:
            tokens = int(m_el.text)
            if tokens:
                initial[pid] = tokens
    for t_el in net_el.iter("transition"):
        tid = t_el.get("id")
        if tid is None:
            raise MalformedPnml("transition without id")
        n_el = t_el.find("name/text")
        label = n_el.text if n_el is not None else None
        transitions[tid] = label if label else None
    for a_el in net_el.iter("arc"):
        src, dst = a_el.get("source"), a_el.get("target")
        if src is None or dst is None:
            raise MalformedPnml("arc without source/target")
        arcs.add((src, dst))
    sinks = sorted(p for p in places
                   if not any(src == p for src, _dst in arcs))
    final: Marking = {sinks[0]: 1} if len(sinks) == 1 else {}
    try:
        return PetriNet(places=frozenset(places), transitions=transitions,
                        arcs=frozenset(arcs), initial_marking=initial,
                        final_marking=final)
    except (ValueError, UnknownPlace) as e:
        raise MalformedPnml(str(e)) from e
