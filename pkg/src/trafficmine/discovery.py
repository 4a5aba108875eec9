"""Process discovery: DFG construction, inductive mining, tree-to-net compilation.

The miner recursively partitions the (noise-filtered) directly-follows graph,
trying XOR, SEQ, PAR, LOOP cuts in that order and falling back to a flower
model. With noise_threshold = 0 every input trace replays on the result.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import networkx as nx

from .eventlog import EventLog
from .petri import PetriNet

SILENT = None  # leaf label of a silent tree node


@dataclass(frozen=True)
class ProcessTree:
    """Block-structured model: operator node or leaf.

    operator is one of SEQ/XOR/PAR/LOOP (children order matters; LOOP's first
    child is the do-body). Leaves have operator None and a label; a leaf with
    label None is silent.
    """

    operator: Optional[str] = None
    label: Optional[str] = None
    children: Tuple["ProcessTree", ...] = ()

    def is_leaf(self) -> bool:
        return self.operator is None

    def to_text(self) -> str:
        if self.is_leaf():
            return self.label if self.label is not None else "tau"
        return f"{self.operator}({', '.join(c.to_text() for c in self.children)})"

    def leaves(self) -> List[Optional[str]]:
        if self.is_leaf():
            return [self.label]
        out: List[Optional[str]] = []
        for c in self.children:
            out.extend(c.leaves())
        return out


def leaf(label: str) -> ProcessTree:
    return ProcessTree(label=label)


def silent_leaf() -> ProcessTree:
    return ProcessTree()


def tree(operator: str, *children: ProcessTree) -> ProcessTree:
    return ProcessTree(operator=operator, children=tuple(children))


@dataclass(frozen=True)
class DirectlyFollowsGraph:
    activities: FrozenSet[str]
    edges: Dict[Tuple[str, str], int] = field(default_factory=dict)
    starts: Dict[str, int] = field(default_factory=dict)
    ends: Dict[str, int] = field(default_factory=dict)


TraceLike = Tuple[str, ...]


def _traces_of(log: Union[EventLog, Sequence[TraceLike]]) -> List[TraceLike]:
    if isinstance(log, EventLog):
        return [t.events for t in log.traces]
    return [tuple(t) for t in log]


def build_dfg(log: Union[EventLog, Sequence[TraceLike]]) -> DirectlyFollowsGraph:
    """Adjacency counts over consecutive events, plus start/end frequencies."""
    edges: Counter = Counter()
    starts: Counter = Counter()
    ends: Counter = Counter()
    activities = set()
    for tr in _traces_of(log):
        if not tr:
            continue
        activities.update(tr)
        starts[tr[0]] += 1
        ends[tr[-1]] += 1
        for a, b in zip(tr, tr[1:]):
            edges[(a, b)] += 1
    return DirectlyFollowsGraph(activities=frozenset(activities),
                                edges=dict(edges), starts=dict(starts),
                                ends=dict(ends))


def filter_dfg(dfg: DirectlyFollowsGraph, threshold: float) -> DirectlyFollowsGraph:
    """Drop outgoing edges rarer than threshold * the source's strongest edge.

    Start and end entries are filtered the same way against their own maxima.
    Activities are never removed; threshold 0 is the identity.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"noise threshold must be in [0, 1), got {threshold}")
    if threshold == 0.0:
        return dfg
    max_out: Dict[str, int] = {}
    for (a, _b), freq in dfg.edges.items():
        max_out[a] = max(max_out.get(a, 0), freq)
    edges = {(a, b): f for (a, b), f in dfg.edges.items()
             if f >= threshold * max_out[a]}
    max_start = max(dfg.starts.values(), default=0)
    starts = {a: f for a, f in dfg.starts.items() if f >= threshold * max_start}
    max_end = max(dfg.ends.values(), default=0)
    ends = {a: f for a, f in dfg.ends.items() if f >= threshold * max_end}
    return DirectlyFollowsGraph(activities=dfg.activities, edges=edges,
                                starts=starts, ends=ends)


# --- cut detection -----------------------------------------------------------

def _xor_cut(dfg: DirectlyFollowsGraph) -> Optional[List[List[str]]]:
    """Connected components of the undirected DFG."""
    G = nx.Graph()
    G.add_nodes_from(dfg.activities)
    G.add_edges_from(dfg.edges.keys())
    comps = sorted((sorted(c) for c in nx.connected_components(G)),
                   key=lambda c: c[0])
    return comps if len(comps) >= 2 else None


def _seq_cut(dfg: DirectlyFollowsGraph) -> Optional[List[List[str]]]:
    """Total order over SCC groups; incomparable SCCs merge into one group."""
    acts = sorted(dfg.activities)
    if len(acts) < 2:
        return None
    G = nx.DiGraph()
    G.add_nodes_from(acts)
    G.add_edges_from(dfg.edges.keys())
    cond = nx.condensation(G)
    n = cond.number_of_nodes()
    if n < 2:
        return None
    reach = {i: nx.descendants(cond, i) for i in cond.nodes}

    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if j not in reach[i] and i not in reach[j]:
                parent[find(i)] = find(j)

    groups: Dict[int, List[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    if len(groups) < 2:
        return None

    def grp_reaches(a: List[int], b: List[int]) -> bool:
        return any(j in reach[i] for i in a for j in b)

    ordered = sorted(groups.values(),
                     key=lambda g: -sum(grp_reaches(g, h)
                                        for h in groups.values() if h is not g))
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            if not grp_reaches(ordered[i], ordered[j]) or grp_reaches(ordered[j], ordered[i]):
                return None
    mapping = cond.graph["mapping"]
    members: Dict[int, List[str]] = {}
    for a in acts:
        members.setdefault(mapping[a], []).append(a)
    return [sorted(x for i in g for x in members[i]) for g in ordered]


def _par_cut(dfg: DirectlyFollowsGraph) -> Optional[List[List[str]]]:
    """Components of the negated graph; each part needs a start and an end."""
    acts = sorted(dfg.activities)
    if len(acts) < 2:
        return None
    H = nx.Graph()
    H.add_nodes_from(acts)
    for i, a in enumerate(acts):
        for b in acts[i + 1:]:
            if not ((a, b) in dfg.edges and (b, a) in dfg.edges):
                H.add_edge(a, b)
    comps = sorted((sorted(c) for c in nx.connected_components(H)),
                   key=lambda c: c[0])
    if len(comps) < 2:
        return None
    starts, ends = set(dfg.starts), set(dfg.ends)
    good = [c for c in comps if set(c) & starts and set(c) & ends]
    bad = [c for c in comps if not (set(c) & starts and set(c) & ends)]
    if not good:
        return None
    if bad:
        # fold start/end-less components into the first valid part; both DFG
        # directions already exist across the former component boundary
        merged = sorted(good[0] + [x for c in bad for x in c])
        parts = sorted([merged] + good[1:], key=lambda c: c[0])
    else:
        parts = good
    return parts if len(parts) >= 2 else None


def _loop_cut(dfg: DirectlyFollowsGraph) -> Optional[List[List[str]]]:
    """Do-body holding all starts/ends; redo parts entered from ends, leaving to starts."""
    starts, ends = set(dfg.starts), set(dfg.ends)
    do = starts | ends
    rest = set(dfg.activities) - do
    if not rest:
        return None
    sub = nx.Graph()
    sub.add_nodes_from(rest)
    for a, b in dfg.edges:
        if a in rest and b in rest:
            sub.add_edge(a, b)
    comps = sorted((sorted(c) for c in nx.connected_components(sub)),
                   key=lambda c: c[0])
    redos: List[List[str]] = []
    extra_do: set = set()
    for comp in comps:
        comp_set = set(comp)
        ok = True
        for (a, b) in dfg.edges:
            if a in do and b in comp_set and a not in ends:
                ok = False
                break
            if a in comp_set and b in do and b not in starts:
                ok = False
                break
        if ok:
            redos.append(comp)
        else:
            extra_do |= comp_set
    if not redos:
        return None
    return [sorted(do | extra_do)] + redos


# --- log splitting -----------------------------------------------------------

def _split_xor(parts: List[List[str]], traces: List[TraceLike]) -> List[List[TraceLike]]:
    alph = [set(p) for p in parts]
    sublogs: List[List[TraceLike]] = [[] for _ in parts]
    for tr in traces:
        counts = [sum(1 for e in tr if e in a) for a in alph]
        best = max(range(len(parts)), key=lambda i: (counts[i], -i))
        sublogs[best].append(tuple(e for e in tr if e in alph[best]))
    return sublogs


def _split_seq(parts: List[List[str]], traces: List[TraceLike]) -> List[List[TraceLike]]:
    """Split each trace at boundaries maximizing correctly-assigned events."""
    alph = [set(p) for p in parts]
    n = len(parts)
    sublogs: List[List[TraceLike]] = [[] for _ in parts]
    NEG = float("-inf")
    for tr in traces:
        m = len(tr)
        dp = [[NEG] * (m + 1) for _ in range(n + 1)]
        dp[0][0] = 0.0
        for j in range(1, n + 1):
            dp[j][0] = 0.0
            for i in range(1, m + 1):
                stay = dp[j][i - 1] + (1.0 if tr[i - 1] in alph[j - 1] else 0.0)
                dp[j][i] = max(dp[j - 1][i], stay)
        # backtrack; on ties close the current part (boundaries as late as possible)
        bounds = [0] * (n + 1)
        bounds[n] = m
        j, i = n, m
        while j > 0:
            if dp[j][i] == dp[j - 1][i]:
                j -= 1
                bounds[j] = i
            else:
                i -= 1
        for j in range(n):
            seg = tr[bounds[j]:bounds[j + 1]]
            sublogs[j].append(tuple(e for e in seg if e in alph[j]))
    return sublogs


def _split_par(parts: List[List[str]], traces: List[TraceLike]) -> List[List[TraceLike]]:
    alph = [set(p) for p in parts]
    return [[tuple(e for e in tr if e in a) for tr in traces] for a in alph]


def _split_loop(parts: List[List[str]], traces: List[TraceLike]) -> List[List[TraceLike]]:
    """Segment traces at do/redo boundaries; every trace starts and ends in do."""
    owner: Dict[str, int] = {}
    for idx, p in enumerate(parts):
        for a in p:
            owner[a] = idx
    sublogs: List[List[TraceLike]] = [[] for _ in parts]
    for tr in traces:
        cur_part = 0
        cur: List[str] = []
        for e in tr:
            p = owner[e]
            if p == cur_part:
                cur.append(e)
                continue
            sublogs[cur_part].append(tuple(cur))
            if cur_part != 0 and p != 0:
                sublogs[0].append(())  # redo->redo jump implies an empty do visit
            cur_part = p
            cur = [e]
        sublogs[cur_part].append(tuple(cur))
        if cur_part != 0:
            sublogs[0].append(())
    return sublogs


_CUTS = (("XOR", _xor_cut, _split_xor),
         ("SEQ", _seq_cut, _split_seq),
         ("PAR", _par_cut, _split_par),
         ("LOOP", _loop_cut, _split_loop))


def _flower(activities: Sequence[str]) -> ProcessTree:
    children = (silent_leaf(),) + tuple(leaf(a) for a in sorted(activities))
    return ProcessTree(operator="LOOP", children=children)


def _mine(traces: List[TraceLike], threshold: float) -> ProcessTree:
    if not traces or all(len(t) == 0 for t in traces):
        return silent_leaf()
    if any(len(t) == 0 for t in traces):
        nonempty = [t for t in traces if t]
        return ProcessTree(operator="XOR",
                           children=(silent_leaf(), _mine(nonempty, threshold)))
    activities = sorted({a for t in traces for a in t})
    if len(activities) == 1 and all(t == (activities[0],) for t in traces):
        return leaf(activities[0])
    dfg = filter_dfg(build_dfg(traces), threshold)
    for op, find_cut, split in _CUTS:
        parts = find_cut(dfg)
        if parts:
            sublogs = split(parts, traces)
            children = tuple(_mine(s, threshold) for s in sublogs)
            return ProcessTree(operator=op, children=children)
    return _flower(activities)


def inductive_miner(log: Union[EventLog, Sequence[TraceLike]],
                    noise_threshold: float = 0.0) -> ProcessTree:
    """Mine a process tree; identical logs yield identical trees."""
    if not 0.0 <= noise_threshold < 1.0:
        raise ValueError(f"noise threshold must be in [0, 1), got {noise_threshold}")
    return _mine(_traces_of(log), noise_threshold)


# --- compilation to a workflow net -------------------------------------------

class _NetBuilder:
    def __init__(self):
        self.places: List[str] = []
        self.transitions: Dict[str, Optional[str]] = {}
        self.arcs: List[Tuple[str, str]] = []
        self._p = 0
        self._t = 0

    def place(self) -> str:
        name = f"p{self._p}"
        self._p += 1
        self.places.append(name)
        return name

    def transition(self, label: Optional[str]) -> str:
        name = f"t{self._t}"
        self._t += 1
        self.transitions[name] = label
        return name

    def arc(self, src: str, dst: str):
        self.arcs.append((src, dst))

    def merge_place(self, old: str, new: str):
        self.places.remove(old)
        self.arcs = [(new if s == old else s, new if d == old else d)
                     for s, d in self.arcs]

    def build(self, node: ProcessTree) -> Tuple[str, str]:
        if node.is_leaf():
            p_in, p_out = self.place(), self.place()
            t = self.transition(node.label)
            self.arc(p_in, t)
            self.arc(t, p_out)
            return p_in, p_out
        if node.operator == "SEQ":
            src, sink = self.build(node.children[0])
            for child in node.children[1:]:
                c_src, c_sink = self.build(child)
                self.merge_place(c_src, sink)
                sink = c_sink
            return src, sink
        if node.operator == "XOR":
            entry, exit_ = self.place(), self.place()
            for child in node.children:
                c_src, c_sink = self.build(child)
                self.merge_place(c_src, entry)
                self.merge_place(c_sink, exit_)
            return entry, exit_
        if node.operator == "PAR":
            entry, exit_ = self.place(), self.place()
            fork = self.transition(None)
            join = self.transition(None)
            self.arc(entry, fork)
            self.arc(join, exit_)
            for child in node.children:
                c_src, c_sink = self.build(child)
                self.arc(fork, c_src)
                self.arc(c_sink, join)
            return entry, exit_
        if node.operator == "LOOP":
            entry, exit_ = self.place(), self.place()
            p_do, p_back = self.place(), self.place()
            t_in = self.transition(None)
            t_out = self.transition(None)
            self.arc(entry, t_in)
            self.arc(t_in, p_do)
            self.arc(p_back, t_out)
            self.arc(t_out, exit_)
            d_src, d_sink = self.build(node.children[0])
            self.merge_place(d_src, p_do)
            self.merge_place(d_sink, p_back)
            for child in node.children[1:]:
                r_src, r_sink = self.build(child)
                self.merge_place(r_src, p_back)
                self.merge_place(r_sink, p_do)
            return entry, exit_
        raise ValueError(f"unknown operator {node.operator!r}")


def tree_to_petri(node: ProcessTree) -> PetriNet:
    """Compile a process tree into a sound workflow net (one source, one sink)."""
    b = _NetBuilder()
    src, sink = b.build(node)
    return PetriNet(places=frozenset(b.places), transitions=b.transitions,
                    arcs=frozenset(b.arcs),
                    initial_marking={src: 1}, final_marking={sink: 1})


def discover(log: Union[EventLog, Sequence[TraceLike]],
             noise_threshold: float = 0.0) -> Tuple[ProcessTree, PetriNet]:
    t = inductive_miner(log, noise_threshold)
    return t, tree_to_petri(t)
