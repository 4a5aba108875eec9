"""Evaluation metrics and the unknown-traffic classifier.

Implements the similarity/separation/complexity scores over cross-device
fitness matrices, per-state fitness thresholds, PMF comparison, segment
scoring, and ROC/AUC for own-vs-foreign discrimination.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .conformance import DEFAULT_COSTS, CostScheme, trace_fitness
from .errors import TrafficMineError
from .eventlog import EventLog
from .petri import PetriNet, arc_degree
from .states import (Standardization, StateModel, align_states, apply_standardization,
                     assign_states)
from .windows import WindowConfig, extract_windows
from .eventlog import extract_event_logs

log = logging.getLogger(__name__)

SEP_EPSILON = 1e-6
UNKNOWN = None  # classification outcome for traces below threshold


class EmptyMatrix(TrafficMineError):
    pass


class SingleState(TrafficMineError):
    pass


class MissingThreshold(TrafficMineError):
    pass


class EmptyScores(TrafficMineError):
    pass


class EmptyInput(TrafficMineError):
    pass


@dataclass
class FitnessMatrix:
    """Fitness of per-device per-state logs against discovered nets.

    Keys are (eval_device, model_device, log_state, net_state). Same-state
    entries across devices feed sim; own-device cross-state entries feed sep.
    Missing entries correspond to empty state logs.
    """

    entries: Dict[Tuple[str, str, int, int], float] = field(default_factory=dict)

    def put(self, eval_device: str, model_device: str, log_state: int,
            net_state: int, fitness: float):
        self.entries[(eval_device, model_device, log_state, net_state)] = fitness

    def get(self, eval_device: str, model_device: str, log_state: int,
            net_state: int) -> Optional[float]:
        return self.entries.get((eval_device, model_device, log_state, net_state))


def compute_sim(F: FitnessMatrix, devices: Sequence[str],
                states: Sequence[int]) -> float:
    """Mean over states/devices of 1 - stddev/mean of cross-device fitness.

    Population standard deviation. Pairs whose mean fitness is 0 contribute 0
    and are counted; pairs with no entries at all are skipped.
    """
    state_terms = []
    for s in states:
        device_terms = []
        for d_i in devices:
            values = [F.get(d_i, d_j, s, s) for d_j in devices]
            values = [v for v in values if v is not None]
            if not values:
                continue
            mean = float(np.mean(values))
            if mean == 0.0:
                device_terms.append(0.0)
                continue
            std = float(np.std(values))  # population
            device_terms.append(1.0 - std / mean)
        if device_terms:
            state_terms.append(sum(device_terms) / len(device_terms))
    if not state_terms:
        raise EmptyMatrix("no fitness entries to compute sim from")
    return sum(state_terms) / len(state_terms)


def compute_sep(F: FitnessMatrix, devices: Sequence[str],
                states: Sequence[int]) -> float:
    """Mean own-state/cross-state fitness ratio minus one.

    Both numerator and denominator evaluate the same (device, state) log,
    against the own-device net of the log's state and of every other state.
    Zero denominators clamp to SEP_EPSILON and are reported.
    """
    if len(states) < 2:
        raise SingleState("sep needs at least two states")
    clamped = 0
    state_terms = []
    for s in states:
        device_terms = []
        for d_i in devices:
            own = F.get(d_i, d_i, s, s)
            if own is None:
                continue
            ratios = []
            for s_j in states:
                if s_j == s:
                    continue
                cross = F.get(d_i, d_i, s, s_j)
                if cross is None:
                    continue
                if cross <= 0.0:
                    cross = SEP_EPSILON
                    clamped += 1
                ratios.append(own / cross)
            if ratios:
                device_terms.append(sum(ratios) / len(ratios) - 1.0)
        if device_terms:
            state_terms.append(sum(device_terms) / len(device_terms))
    if not state_terms:
        raise EmptyMatrix("no fitness entries to compute sep from")
    if clamped:
        log.warning("sep: clamped %d zero denominator(s) to %g", clamped, SEP_EPSILON)
    return sum(state_terms) / len(state_terms)


def compute_comp(nets: Iterable[PetriNet]) -> float:
    """Mean structural simplicity: 1 - arc_degree per net."""
    values = [1.0 - arc_degree(n) for n in nets]
    if not values:
        raise EmptyInput("no nets to compute comp from")
    return sum(values) / len(values)


@dataclass
class ClassifierModel:
    """Everything needed to classify unseen traffic of one training device."""

    standardization: Standardization
    state_model: StateModel
    window_length: int
    nets: Dict[int, PetriNet]
    thresholds: Dict[int, float]
    costs: CostScheme = DEFAULT_COSTS


def calibrate_thresholds(validation_logs: Mapping[int, EventLog],
                         nets: Mapping[int, PetriNet],
                         costs: CostScheme = DEFAULT_COSTS,
                         fitness_cache: Optional[dict] = None) -> Dict[int, float]:
    """Per-state mean validation trace fitness; empty states are excluded."""
    thresholds: Dict[int, float] = {}
    for s in sorted(nets):
        vlog = validation_logs.get(s)
        if vlog is None or len(vlog) == 0:
            log.warning("state %d: empty validation log, state excluded", s)
            continue
        total = 0.0
        for t in vlog.traces:
            total += _cached_fitness(t.events, s, nets[s], costs, fitness_cache)
        thresholds[s] = total / len(vlog)
    return thresholds


def _cached_fitness(events: Tuple[str, ...], state: int, net: PetriNet,
                    costs: CostScheme, cache: Optional[dict]) -> float:
    if cache is None:
        return trace_fitness(events, net, costs)
    key = (state, events)
    if key not in cache:
        cache[key] = trace_fitness(events, net, costs)
    return cache[key]


def classify_trace(events: Sequence[str], state: int, model: ClassifierModel,
                   fitness_cache: Optional[dict] = None) -> Optional[int]:
    """State id if fitness meets the state's threshold, else UNKNOWN (None).

    Fitness exactly equal to the threshold classifies as positive.
    """
    if state not in model.thresholds:
        raise MissingThreshold(f"state {state} has no calibrated threshold")
    f = _cached_fitness(tuple(events), state, model.nets[state], model.costs,
                        fitness_cache)
    return state if f >= model.thresholds[state] else UNKNOWN


@dataclass(frozen=True)
class StatePmf:
    """Distribution over state ids 1..k plus UNKNOWN (last entry)."""

    k: int
    probs: Tuple[float, ...]  # length k + 1

    def to_json_dict(self) -> Dict[str, float]:
        doc = {str(s): self.probs[s - 1] for s in range(1, self.k + 1)}
        doc["unknown"] = self.probs[self.k]
        return doc


def build_pmf(classifications: Sequence[Optional[int]], k: int) -> StatePmf:
    if len(classifications) == 0:
        raise EmptyInput("no classifications to build a PMF from")
    counts = [0] * (k + 1)
    for c in classifications:
        idx = k if c is UNKNOWN else c - 1
        counts[idx] += 1
    total = len(classifications)
    return StatePmf(k=k, probs=tuple(c / total for c in counts))


def pmf_intersection(P: StatePmf, Q: StatePmf) -> float:
    if P.k != Q.k:
        raise EmptyInput(f"PMF supports differ: k={P.k} vs k={Q.k}")
    return sum(min(p, q) for p, q in zip(P.probs, Q.probs))


def pmf_cosine(P: StatePmf, Q: StatePmf) -> float:
    if P.k != Q.k:
        raise EmptyInput(f"PMF supports differ: k={P.k} vs k={Q.k}")
    dot = sum(p * q for p, q in zip(P.probs, Q.probs))
    np_ = math.sqrt(sum(p * p for p in P.probs))
    nq = math.sqrt(sum(q * q for q in Q.probs))
    if np_ == 0.0 or nq == 0.0:
        return 0.0
    return dot / (np_ * nq)


def segment_traces(records, model: ClassifierModel, device_id: str = "seg"):
    """Windowing -> standardization -> assignment -> traces for one segment."""
    cfg = WindowConfig(model.window_length)
    stats = extract_windows(records, cfg)
    if not stats:
        return []
    Z = apply_standardization(model.standardization, stats)
    assign = assign_states(model.state_model, Z)
    labeled = align_states(records, list(assign), cfg)
    logs = extract_event_logs(labeled, cfg, model.state_model.k, device_id=device_id)
    out = []
    for s in sorted(logs):
        for t in logs[s].traces:
            out.append((s, t.events))
    return out


def segment_scores(records, model: ClassifierModel,
                   segment_fraction: float = 0.01,
                   fitness_cache: Optional[dict] = None,
                   device_id: str = "seg") -> List[float]:
    """Fraction of UNKNOWN traces per consecutive packet segment.

    Segment length is ceil(segment_fraction * total packets). Segments that
    produce no whole window are skipped with a warning. Traces whose state has
    no calibrated threshold count as UNKNOWN.
    """
    if not 0.0 < segment_fraction <= 1.0:
        raise ValueError(f"segment_fraction must be in (0, 1], got {segment_fraction}")
    alpha = len(records)
    if alpha == 0:
        raise EmptyInput("no packets to segment")
    seg_len = math.ceil(segment_fraction * alpha)
    scores = []
    for i in range(0, alpha, seg_len):
        segment = records[i:i + seg_len]
        traces = segment_traces(segment, model, device_id=device_id)
        if not traces:
            log.warning("%s: segment %d produced no whole window, skipped",
                        device_id, i // seg_len)
            continue
        unknown = 0
        for state, events in traces:
            if state not in model.thresholds:
                unknown += 1
                continue
            if classify_trace(events, state, model, fitness_cache) is UNKNOWN:
                unknown += 1
        scores.append(unknown / len(traces))
    return scores


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


@dataclass(frozen=True)
class RocCurve:
    points: Tuple[RocPoint, ...]
    auc: float


def roc_auc(foreign_scores: Sequence[float], own_scores: Sequence[float]) -> RocCurve:
    """Foreign-vs-own ROC; predict foreign iff score >= threshold.

    AUC is the rank statistic (ties count 0.5), which equals the trapezoidal
    area under the swept curve.
    """
    if len(foreign_scores) == 0 or len(own_scores) == 0:
        raise EmptyScores("both foreign and own score sets must be non-empty")
    points = [RocPoint(threshold=float("inf"), fpr=0.0, tpr=0.0)]
    for theta in sorted(set(foreign_scores) | set(own_scores), reverse=True):
        tpr = sum(1 for s in foreign_scores if s >= theta) / len(foreign_scores)
        fpr = sum(1 for s in own_scores if s >= theta) / len(own_scores)
        points.append(RocPoint(threshold=theta, fpr=fpr, tpr=tpr))
    wins = 0.0
    for f in foreign_scores:
        for o in own_scores:
            if f > o:
                wins += 1.0
            elif f == o:
                wins += 0.5
    auc = wins / (len(foreign_scores) * len(own_scores))
    return RocCurve(points=tuple(points), auc=auc)


def roc_csv(curve: RocCurve) -> str:
    lines = ["threshold,fpr,tpr"]
    for p in curve.points:
        lines.append(f"{p.threshold!r},{p.fpr!r},{p.tpr!r}")
    return "\n".join(lines) + "\n"
