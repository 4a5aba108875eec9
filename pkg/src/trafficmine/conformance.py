"""Alignment-based conformance checking.

Optimal alignments come from a uniform-cost search over the synchronous
product of trace and net. Ties between equal-cost alignments resolve to the
one with the most synchronous moves (equivalently: fewest log moves, since
sync + log moves always total the trace length), then to the lexicographically
smallest move sequence under SYNC < LOG < MODEL < SILENT.
"""

from __future__ import annotations

import heapq
import weakref
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import TrafficMineError
from .eventlog import EventLog, sorted_variants
from .petri import Marking, PetriNet, fire, marking_key

SYNC = "SYNC"
LOG_ONLY = "LOG_ONLY"
MODEL_ONLY = "MODEL_ONLY"
MODEL_SILENT = "MODEL_SILENT"

_KIND_RANK = {SYNC: 0, LOG_ONLY: 1, MODEL_ONLY: 2, MODEL_SILENT: 3}
_KIND_CODE = {SYNC: "s", LOG_ONLY: "l", MODEL_ONLY: "m", MODEL_SILENT: "t"}


class SearchBudgetExceeded(TrafficMineError):
    pass


class EmptyLog(TrafficMineError):
    pass


@dataclass(frozen=True)
class Move:
    kind: str
    label: Optional[str] = None       # event/transition label
    transition: Optional[str] = None  # transition id for model-side moves

    def sort_key(self):
        return (_KIND_RANK[self.kind], self.label or "", self.transition or "")

    def compact(self) -> str:
        inner = self.label if self.label is not None else self.transition
        return f"{_KIND_CODE[self.kind]}({inner})"


@dataclass(frozen=True)
class Alignment:
    moves: Tuple[Move, ...]
    total_cost: float

    def compact(self) -> str:
        return "|".join(m.compact() for m in self.moves)


@dataclass(frozen=True)
class CostScheme:
    sync_cost: float = 0.0
    silent_cost: float = 0.0
    log_move_cost: float = 1.0
    model_move_cost: float = 1.0

    def __post_init__(self):
        if self.sync_cost > min(self.log_move_cost, self.model_move_cost):
            raise ValueError("sync moves must not cost more than log/model moves")
        if min(self.sync_cost, self.silent_cost,
               self.log_move_cost, self.model_move_cost) < 0:
            raise ValueError("negative move costs are not allowed")


DEFAULT_COSTS = CostScheme()


def optimal_alignment(trace: Sequence[str], net: PetriNet,
                      costs: CostScheme = DEFAULT_COSTS,
                      budget: int = 1_000_000) -> Alignment:
    """Minimum-cost alignment of a trace against a net.

    Dijkstra over (marking, trace position) with priority
    (cost, log moves, move-sequence key); the secondary keys implement the
    deterministic tie-break exactly.
    """
    trace = tuple(trace)
    goal = (marking_key(net.final_marking), len(trace))
    start_marking = dict(net.initial_marking)
    start = (marking_key(start_marking), 0)

    counter = 0
    heap: List[tuple] = [(0.0, 0, (), counter, start_marking, 0, ())]
    best: Dict[tuple, tuple] = {start: (0.0, 0, ())}
    pops = 0
    while heap:
        cost, log_moves, move_key, _, marking, pos, moves = heapq.heappop(heap)
        state = (marking_key(marking), pos)
        if best.get(state, (float("inf"),)) < (cost, log_moves, move_key):
            continue
        pops += 1
        if pops > budget:
            raise SearchBudgetExceeded(f"alignment search exceeded {budget} expansions")
        if state == goal:
            return Alignment(moves=moves, total_cost=cost)

        successors = []
        if pos < len(trace):
            event = trace[pos]
            successors.append((Move(kind=LOG_ONLY, label=event),
                               costs.log_move_cost, marking, pos + 1))
            for t in sorted(net.transitions):
                if net.transitions[t] == event and _is_enabled(net, marking, t):
                    successors.append((Move(kind=SYNC, label=event, transition=t),
                                       costs.sync_cost, fire(net, marking, t), pos + 1))
        for t in sorted(net.transitions):
            if not _is_enabled(net, marking, t):
                continue
            label = net.transitions[t]
            if label is None:
                move = Move(kind=MODEL_SILENT, transition=t)
                step = costs.silent_cost
            else:
                move = Move(kind=MODEL_ONLY, label=label, transition=t)
                step = costs.model_move_cost
            successors.append((move, step, fire(net, marking, t), pos))

        for move, step, nxt_marking, nxt_pos in successors:
            nxt_state = (marking_key(nxt_marking), nxt_pos)
            nxt_key = (cost + step,
                       log_moves + (1 if move.kind == LOG_ONLY else 0),
                       move_key + (move.sort_key(),))
            if nxt_state in best and best[nxt_state] <= nxt_key:
                continue
            best[nxt_state] = nxt_key
            counter += 1
            heapq.heappush(heap, (*nxt_key, counter, nxt_marking, nxt_pos,
                                  moves + (move,)))
    raise SearchBudgetExceeded("final marking unreachable from initial marking")


def _is_enabled(net: PetriNet, marking: Marking, t: str) -> bool:
    return all(marking.get(p, 0) >= 1 for p in net.preset(t))


_model_path_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def cheapest_model_path_cost(net: PetriNet, costs: CostScheme = DEFAULT_COSTS,
                             budget: int = 1_000_000) -> float:
    """Cost of the cheapest model-only run from initial to final marking."""
    cache = _model_path_cache.setdefault(net, {})
    cache_key = (costs.model_move_cost, costs.silent_cost)
    if cache_key in cache:
        return cache[cache_key]
    target = marking_key(net.final_marking)
    start = dict(net.initial_marking)
    heap: List[tuple] = [(0.0, 0, start)]
    dist = {marking_key(start): 0.0}
    counter = 0
    pops = 0
    while heap:
        cost, _, marking = heapq.heappop(heap)
        key = marking_key(marking)
        if cost > dist.get(key, float("inf")):
            continue
        pops += 1
        if pops > budget:
            raise SearchBudgetExceeded(f"model path search exceeded {budget} expansions")
        if key == target:
            cache[cache_key] = cost
            return cost
        for t in sorted(net.transitions):
            if not _is_enabled(net, marking, t):
                continue
            step = costs.silent_cost if net.transitions[t] is None else costs.model_move_cost
            nxt = fire(net, marking, t)
            nkey = marking_key(nxt)
            ncost = cost + step
            if ncost < dist.get(nkey, float("inf")):
                dist[nkey] = ncost
                counter += 1
                heapq.heappush(heap, (ncost, counter, nxt))
    raise SearchBudgetExceeded("final marking unreachable from initial marking")


def trace_fitness(trace: Sequence[str], net: PetriNet,
                  costs: CostScheme = DEFAULT_COSTS) -> float:
    """1 - cost / worst-case cost, in [0, 1]; 1 iff the trace replays exactly."""
    alignment = optimal_alignment(trace, net, costs)
    worst = len(trace) * costs.log_move_cost + cheapest_model_path_cost(net, costs)
    if worst == 0.0:
        return 1.0
    return 1.0 - alignment.total_cost / worst


def log_fitness(log: EventLog, net: PetriNet,
                costs: CostScheme = DEFAULT_COSTS) -> float:
    """Mean trace fitness over the trace multiset; variants aligned once."""
    if len(log) == 0:
        raise EmptyLog(f"state {log.state}: fitness of an empty log is undefined")
    total = 0.0
    count = 0
    for events, freq in sorted_variants(log):
        f = trace_fitness(events, net, costs)
        total += f * freq
        count += freq
    return total / count


@dataclass(frozen=True)
class VariantResult:
    variant_id: int
    events: Tuple[str, ...]
    frequency: int
    cost: float
    fitness: float
    alignment: Alignment


def conformance_report(log: EventLog, net: PetriNet,
                       costs: CostScheme = DEFAULT_COSTS) -> List[VariantResult]:
    """Per-variant alignment results, most frequent variants first."""
    if len(log) == 0:
        raise EmptyLog(f"state {log.state}: nothing to check")
    worst_tail = cheapest_model_path_cost(net, costs)
    rows = []
    for vid, (events, freq) in enumerate(sorted_variants(log)):
        alignment = optimal_alignment(events, net, costs)
        worst = len(events) * costs.log_move_cost + worst_tail
        fitness = 1.0 if worst == 0.0 else 1.0 - alignment.total_cost / worst
        rows.append(VariantResult(variant_id=vid, events=events, frequency=freq,
                                  cost=alignment.total_cost, fitness=fitness,
                                  alignment=alignment))
    return rows


def report_csv(rows: Iterable[VariantResult]) -> str:
    lines = ["variant_id,frequency,cost,fitness,moves"]
    for r in rows:
        lines.append(f"{r.variant_id},{r.frequency},{r.cost!r},{r.fitness!r},"
                     f"{r.alignment.compact()}")
    return "\n".join(lines) + "\n"
