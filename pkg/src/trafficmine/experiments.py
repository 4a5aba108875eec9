"""End-to-end experiment pipelines.

Experiment 1 measures cross-device model similarity, state separation, and
structural simplicity over a (window_length, k) grid, with preprocessing
parameters taken from one held-out device.

Experiment 2 trains a classifier on one device, calibrates per-state fitness
thresholds on validation devices, and scores unseen own-game and foreign-game
devices segment by segment (ROC/AUC plus classification PMFs).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .conformance import DEFAULT_COSTS, CostScheme, log_fitness
from .discovery import discover
from .errors import ConfigInvalid
from .evaluation import (ClassifierModel, FitnessMatrix, RocCurve, StatePmf,
                         build_pmf, calibrate_thresholds, classify_trace,
                         compute_comp, compute_sep, compute_sim, roc_auc,
                         segment_scores, segment_traces)
from .eventlog import EventLog, variant_filter
from .ingest import PacketRecord
from .petri import PetriNet
from .states import (StateModel, Standardization, align_states,
                     apply_standardization, assign_states, fit_kmeans,
                     fit_standardization)
from .windows import WindowConfig, extract_windows
from .eventlog import extract_event_logs


@dataclass(frozen=True)
class Roles:
    """Device roles for experiment 2."""

    train: str
    validation: Tuple[str, ...]
    test_own: Tuple[str, ...]
    test_foreign: Tuple[str, ...]


@dataclass
class Exp1Cell:
    window_length: int
    k: int
    sim: float
    sep: float
    comp: float


@dataclass
class Exp2Cell:
    window_length: int
    k: int
    intersection: float
    cosine_similarity: float
    auc: float
    pmf_own: StatePmf
    pmf_foreign: StatePmf
    roc: RocCurve
    own_scores: Tuple[float, ...]
    foreign_scores: Tuple[float, ...]
    thresholds: Dict[int, float]


def device_state_logs(records: Sequence[PacketRecord], std: Standardization,
                      model: StateModel, cfg: WindowConfig,
                      device_id: str) -> Dict[int, EventLog]:
    """windows -> standardize -> assign -> broadcast -> per-state logs."""
    stats = extract_windows(records, cfg)
    if not stats:
        return {s: EventLog(state=s) for s in range(1, model.k + 1)}
    Z = apply_standardization(std, stats)
    assign = assign_states(model, Z)
    labeled = align_states(records, list(assign), cfg)
    return extract_event_logs(labeled, cfg, model.k, device_id=device_id)


def discover_state_nets(logs: Mapping[int, EventLog], noise_threshold: float,
                        keep_fraction: float = 1.0
                        ) -> Tuple[Dict[int, object], Dict[int, PetriNet]]:
    """Mine one net per state; empty logs yield the silent singleton net."""
    trees: Dict[int, object] = {}
    nets: Dict[int, PetriNet] = {}
    for s in sorted(logs):
        state_log = logs[s]
        if keep_fraction < 1.0 and len(state_log) > 0:
            state_log = variant_filter(state_log, keep_fraction)
        tree, net = discover(state_log, noise_threshold)
        trees[s] = tree
        nets[s] = net
    return trees, nets


def fit_preprocessing(records: Sequence[PacketRecord], cfg: WindowConfig,
                      k: int, seed: int) -> Tuple[Standardization, StateModel]:
    stats = extract_windows(records, cfg)
    std = fit_standardization(stats)
    Z = apply_standardization(std, stats)
    return std, fit_kmeans(Z, k, seed)


def _exp1_cell(device_records: Mapping[str, Sequence[PacketRecord]],
               preprocess_device: str, wl: int, k: int, seed: int,
               noise_threshold: float, keep_fraction: float,
               costs: CostScheme = DEFAULT_COSTS) -> Exp1Cell:
    cfg = WindowConfig(wl)
    std, model = fit_preprocessing(device_records[preprocess_device], cfg, k, seed)
    test_devices = [d for d in device_records if d != preprocess_device]
    states = list(range(1, k + 1))

    logs: Dict[str, Dict[int, EventLog]] = {}
    nets: Dict[str, Dict[int, PetriNet]] = {}
    for d in test_devices:
        logs[d] = device_state_logs(device_records[d], std, model, cfg, d)
        _trees, nets[d] = discover_state_nets(logs[d], noise_threshold, keep_fraction)

    F = FitnessMatrix()
    for d_i in test_devices:
        for s in states:
            state_log = logs[d_i][s]
            if len(state_log) == 0:
                continue
            for d_j in test_devices:
                F.put(d_i, d_j, s, s, log_fitness(state_log, nets[d_j][s], costs))
            for s_j in states:
                if s_j != s:
                    F.put(d_i, d_i, s, s_j,
                          log_fitness(state_log, nets[d_i][s_j], costs))

    sim = compute_sim(F, test_devices, states)
    sep = compute_sep(F, test_devices, states)
    comp = compute_comp(n for per_device in nets.values()
                        for n in per_device.values())
    return Exp1Cell(window_length=wl, k=k, sim=sim, sep=sep, comp=comp)


def run_experiment1(device_records: Mapping[str, Sequence[PacketRecord]],
                    window_lengths: Sequence[int], state_counts: Sequence[int],
                    seed: int, noise_threshold: float = 0.2,
                    keep_fraction: float = 1.0,
                    preprocess_device: Optional[str] = None,
                    workers: int = 1) -> List[Exp1Cell]:
    devices = list(device_records)
    if len(devices) < 2:
        raise ConfigInvalid("experiment 1 needs at least 2 devices")
    if not window_lengths or not state_counts:
        raise ConfigInvalid("empty window_length or state count grid")
    if preprocess_device is None:
        preprocess_device = devices[0]
    if preprocess_device not in device_records:
        raise ConfigInvalid(f"unknown preprocess device {preprocess_device!r}")

    grid = [(wl, k) for wl in window_lengths for k in state_counts]
    args = [(device_records, preprocess_device, wl, k, seed,
             noise_threshold, keep_fraction) for wl, k in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_exp1_cell_star, args))
    else:
        cells = [_exp1_cell(*a) for a in args]
    return sorted(cells, key=lambda c: (c.window_length, c.k))


def _exp1_cell_star(args):
    return _exp1_cell(*args)


def build_classifier(train_records: Sequence[PacketRecord],
                     validation_records: Mapping[str, Sequence[PacketRecord]],
                     wl: int, k: int, seed: int, noise_threshold: float,
                     keep_fraction: float, train_device: str = "train",
                     costs: CostScheme = DEFAULT_COSTS,
                     fitness_cache: Optional[dict] = None) -> ClassifierModel:
    """Training-device nets plus validation-calibrated thresholds."""
    cfg = WindowConfig(wl)
    std, model = fit_preprocessing(train_records, cfg, k, seed)
    train_logs = device_state_logs(train_records, std, model, cfg, train_device)
    _trees, nets = discover_state_nets(train_logs, noise_threshold, keep_fraction)

    pooled: Dict[int, List] = {s: [] for s in range(1, k + 1)}
    for dev_id, records in validation_records.items():
        dev_logs = device_state_logs(records, std, model, cfg, dev_id)
        for s, state_log in dev_logs.items():
            pooled[s].extend(state_log.traces)
    validation_logs = {s: EventLog(state=s, traces=tuple(ts))
                       for s, ts in pooled.items()}
    thresholds = calibrate_thresholds(validation_logs, nets, costs, fitness_cache)
    return ClassifierModel(standardization=std, state_model=model,
                           window_length=wl, nets=nets, thresholds=thresholds,
                           costs=costs)


def _exp2_cell(device_records: Mapping[str, Sequence[PacketRecord]],
               roles: Roles, wl: int, k: int, seed: int,
               noise_threshold: float, keep_fraction: float,
               segment_fraction: float) -> Exp2Cell:
    cache: dict = {}
    model = build_classifier(device_records[roles.train],
                             {d: device_records[d] for d in roles.validation},
                             wl, k, seed, noise_threshold, keep_fraction,
                             train_device=roles.train, fitness_cache=cache)

    def classify_device(device: str) -> List[Optional[int]]:
        out = []
        for state, events in segment_traces(device_records[device], model,
                                            device_id=device):
            if state not in model.thresholds:
                out.append(None)
            else:
                out.append(classify_trace(events, state, model, cache))
        return out

    own_cls: List[Optional[int]] = []
    for d in roles.test_own:
        own_cls.extend(classify_device(d))
    foreign_cls: List[Optional[int]] = []
    for d in roles.test_foreign:
        foreign_cls.extend(classify_device(d))
    pmf_own = build_pmf(own_cls, k)
    pmf_foreign = build_pmf(foreign_cls, k)

    own_scores: List[float] = []
    for d in roles.test_own:
        own_scores.extend(segment_scores(device_records[d], model,
                                         segment_fraction, cache, device_id=d))
    foreign_scores: List[float] = []
    for d in roles.test_foreign:
        foreign_scores.extend(segment_scores(device_records[d], model,
                                             segment_fraction, cache, device_id=d))
    curve = roc_auc(foreign_scores, own_scores)

    from .evaluation import pmf_cosine, pmf_intersection
    return Exp2Cell(window_length=wl, k=k,
                    intersection=pmf_intersection(pmf_own, pmf_foreign),
                    cosine_similarity=pmf_cosine(pmf_own, pmf_foreign),
                    auc=curve.auc, pmf_own=pmf_own, pmf_foreign=pmf_foreign,
                    roc=curve, own_scores=tuple(own_scores),
                    foreign_scores=tuple(foreign_scores),
                    thresholds=dict(model.thresholds))


def run_experiment2(device_records: Mapping[str, Sequence[PacketRecord]],
                    roles: Roles, window_lengths: Sequence[int],
                    state_counts: Sequence[int], seed: int,
                    noise_threshold: float = 0.2, keep_fraction: float = 1.0,
                    segment_fraction: float = 0.01,
                    workers: int = 1) -> List[Exp2Cell]:
    named = [roles.train, *roles.validation, *roles.test_own, *roles.test_foreign]
    if len(set(named)) != len(named):
        raise ConfigInvalid("device roles overlap")
    missing = [d for d in named if d not in device_records]
    if missing:
        raise ConfigInvalid(f"roles reference unknown devices: {missing}")
    if not roles.validation or not roles.test_own or not roles.test_foreign:
        raise ConfigInvalid("validation, test_own, and test_foreign must be non-empty")
    if not window_lengths or not state_counts:
        raise ConfigInvalid("empty window_length or state count grid")

    grid = [(wl, k) for wl in window_lengths for k in state_counts]
    args = [(device_records, roles, wl, k, seed, noise_threshold,
             keep_fraction, segment_fraction) for wl, k in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_exp2_cell_star, args))
    else:
        cells = [_exp2_cell(*a) for a in args]
    return sorted(cells, key=lambda c: (c.window_length, c.k))


def _exp2_cell_star(args):
    return _exp2_cell(*args)


def heatmap_csv(cells: Sequence[Exp1Cell]) -> str:
    lines = ["window_length,k,sim,sep,comp"]
    for c in cells:
        lines.append(f"{c.window_length},{c.k},{c.sim!r},{c.sep!r},{c.comp!r}")
    return "\n".join(lines) + "\n"


def classification_csv(cells: Sequence[Exp2Cell]) -> str:
    lines = ["window_length,k,intersection,cosine_similarity,auc"]
    for c in cells:
        lines.append(f"{c.window_length},{c.k},{c.intersection!r},"
                     f"{c.cosine_similarity!r},{c.auc!r}")
    return "\n".join(lines) + "\n"
