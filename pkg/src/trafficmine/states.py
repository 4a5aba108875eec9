"""State characterization: standardization + seeded k-means over window features.

State ids are 1-based and canonical: centroids are sorted lexicographically
after fitting, so the same data and seed always name states identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import TrafficMineError
from .eventlog import flags_to_string, parse_flag_string
from .ingest import CANONICAL_HEADER, PacketRecord, read_canonical, write_canonical
from .windows import FEATURE_NAMES, WindowConfig, WindowStats, window_groups

LABELED_HEADER = CANONICAL_HEADER + ",window_index,state"


class EmptyInput(TrafficMineError):
    pass


class DimensionMismatch(TrafficMineError):
    pass


class TooFewPoints(TrafficMineError):
    pass


class LengthMismatch(TrafficMineError):
    pass


@dataclass(frozen=True)
class Standardization:
    """Per-feature z-score parameters (population standard deviation)."""

    means: Tuple[float, ...]
    stddevs: Tuple[float, ...]


@dataclass
class StateModel:
    """Canonicalized k-means model; inertia is None for reloaded models."""

    k: int
    seed: int
    centroids: np.ndarray
    inertia: Optional[float] = None


@dataclass(frozen=True)
class LabeledPacket:
    """A packet annotated with its window index and that window's state."""

    record: PacketRecord
    window_index: int
    state: int


def _as_matrix(X: Union[np.ndarray, Sequence[WindowStats]]) -> np.ndarray:
    if isinstance(X, np.ndarray):
        M = np.asarray(X, dtype=float)
    else:
        M = np.array([w.features for w in X], dtype=float)
    if M.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {M.shape}")
    return M


def fit_standardization(stats: Sequence[WindowStats]) -> Standardization:
    if len(stats) == 0:
        raise EmptyInput("no windows to standardize")
    M = _as_matrix(stats)
    means = M.mean(axis=0)
    stddevs = M.std(axis=0)  # population stddev
    return Standardization(means=tuple(float(x) for x in means),
                           stddevs=tuple(float(x) for x in stddevs))


def apply_standardization(std: Standardization,
                          X: Union[np.ndarray, Sequence[WindowStats]]) -> np.ndarray:
    """Z-score features; constant features (stddev 0) map to 0."""
    M = _as_matrix(X)
    if M.shape[1] != len(std.means):
        raise DimensionMismatch(
            f"{M.shape[1]} features vs {len(std.means)} standardization params")
    means = np.array(std.means)
    stds = np.array(std.stddevs)
    safe = np.where(stds == 0.0, 1.0, stds)
    Z = (M - means) / safe
    Z[:, stds == 0.0] = 0.0
    return Z


def fit_kmeans(Z: np.ndarray, k: int, seed: int,
               max_iter: int = 300, tol: float = 1e-6) -> StateModel:
    """Lloyd's algorithm from a seeded k-means++ initialization.

    Empty clusters are repaired by reseeding at the point farthest from its
    assigned centroid. Centroids are returned in lexicographic row order.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {Z.shape}")
    n = Z.shape[0]
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise TooFewPoints(f"{n} points cannot support k={k}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(Z, k, rng)
    assignment = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        dists = _sq_distances(Z, centroids)
        assignment = np.argmin(dists, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = Z[assignment == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
        empty = [j for j in range(k) if not np.any(assignment == j)]
        if empty:
            taken: set = set()
            for j in empty:
                point_d = _sq_distances(Z, new_centroids)[np.arange(n), assignment]
                order = np.argsort(-point_d, kind="stable")
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                new_centroids[j] = Z[pick]
                assignment[pick] = j
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    dists = _sq_distances(Z, centroids)
    assignment = np.argmin(dists, axis=1)
    inertia = float(dists[np.arange(n), assignment].sum())
    order = np.lexsort(centroids.T[::-1])
    return StateModel(k=k, seed=seed, centroids=centroids[order], inertia=inertia)


def _kmeanspp(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = Z.shape[0]
    centroids = np.empty((k, Z.shape[1]))
    centroids[0] = Z[int(rng.integers(n))]
    closest = np.sum((Z - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total == 0.0:
            # all remaining points coincide with a centroid; lowest index wins
            pick = int(np.argmin(closest))
        else:
            pick = int(rng.choice(n, p=closest / total))
        centroids[j] = Z[pick]
        closest = np.minimum(closest, np.sum((Z - centroids[j]) ** 2, axis=1))
    return centroids


def _sq_distances(Z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((Z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def assign_states(model: StateModel, Z: np.ndarray) -> np.ndarray:
    """Nearest-centroid state ids (1-based); ties resolve to the lowest id."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != model.centroids.shape[1]:
        raise DimensionMismatch(
            f"points of dim {Z.shape[-1] if Z.ndim else '?'} vs centroids of "
            f"dim {model.centroids.shape[1]}")
    return np.argmin(_sq_distances(Z, model.centroids), axis=1) + 1


def align_states(records: Sequence[PacketRecord], window_assignments: Sequence[int],
                 cfg: WindowConfig) -> List[LabeledPacket]:
    """Broadcast per-window states back onto the packets of each window.

    Packets in dropped trailing partial windows are excluded, so the output
    length is window_length * len(window_assignments).
    """
    groups = list(window_groups(records, cfg.window_length))
    if len(groups) != len(window_assignments):
        raise LengthMismatch(
            f"{len(groups)} windows derived from records vs "
            f"{len(window_assignments)} assignments")
    labeled = []
    for widx, ((_session, packets), state) in enumerate(zip(groups, window_assignments)):
        for p in packets:
            labeled.append(LabeledPacket(record=p, window_index=widx, state=int(state)))
    return labeled


def save_state_model(std: Standardization, model: StateModel) -> str:
    """Persist standardization + centroids as a single JSON document."""
    doc = {"k": model.k, "seed": model.seed,
           "feature_means": list(std.means),
           "feature_stddevs": list(std.stddevs),
           "centroids": [list(map(float, row)) for row in model.centroids]}
    return json.dumps(doc, indent=2) + "\n"


def load_state_model(text: str) -> Tuple[Standardization, StateModel]:
    doc = json.loads(text)
    std = Standardization(means=tuple(doc["feature_means"]),
                          stddevs=tuple(doc["feature_stddevs"]))
    centroids = np.array(doc["centroids"], dtype=float)
    if centroids.shape != (doc["k"], len(std.means)):
        raise DimensionMismatch("centroid matrix shape disagrees with k/features")
    return std, StateModel(k=int(doc["k"]), seed=int(doc["seed"]),
                           centroids=centroids, inertia=None)


def write_labeled_csv(labeled: Sequence[LabeledPacket]) -> str:
    body = write_canonical([lp.record for lp in labeled]).splitlines()
    lines = [LABELED_HEADER]
    for row, lp in zip(body[1:], labeled):
        lines.append(f"{row},{lp.window_index},{lp.state}")
    return "\n".join(lines) + "\n"


def read_labeled_csv(text: str) -> List[LabeledPacket]:
    lines = text.splitlines()
    if not lines or lines[0] != LABELED_HEADER:
        raise ValueError("missing or wrong labeled CSV header")
    labeled = []
    for line in lines[1:]:
        if not line:
            continue
        fields = line.rsplit(",", 2)
        if len(fields) != 3:
            raise ValueError(f"malformed labeled row: {line!r}")
        record = read_canonical(CANONICAL_HEADER + "\n" + fields[0] + "\n")[0]
        labeled.append(LabeledPacket(record=record, window_index=int(fields[1]),
                                     state=int(fields[2])))
    return labeled
