"""Exact dynamic time warping and iterative barycenter averaging.

The public warping distance uses absolute local cost so reported numbers
stay in channel units. Barycenter refinement internally aligns with
squared local cost: with squared costs the coordinate-mean update can
only shrink the summed squared alignment cost, which makes the inertia
sequence provably non-increasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import EmptyInput, EmptySequence, MissingChannel, MissingGroup
from .features import ChannelId, ChannelSet, NormStats, apply_norm, channel_by_name, fit_norm
from .ingest import GROUPS
from .util import parallel_map

log = logging.getLogger(__name__)

MODEL_FORMAT = "dba-prototypes"
MODEL_VERSION = 1


@nb.njit(cache=True, nogil=True)
def _cumcost(a, b, squared):
    """Cumulative cost matrix for steps (1,0), (0,1), (1,1)."""
    n = a.size
    m = b.size
    acc = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            d = a[i] - b[j]
            c = d * d if squared else abs(d)
            if i == 0 and j == 0:
                best = 0.0
            elif i == 0:
                best = acc[0, j - 1]
            elif j == 0:
                best = acc[i - 1, 0]
            else:
                best = acc[i - 1, j - 1]
                if acc[i - 1, j] < best:
                    best = acc[i - 1, j]
                if acc[i, j - 1] < best:
                    best = acc[i, j - 1]
            acc[i, j] = c + best
    return acc


@nb.njit(cache=True, nogil=True)
def _backtrack(acc):
    """Optimal path from (0,0) to the end; ties prefer diagonal, then row step."""
    n, m = acc.shape
    path = np.empty((n + m - 1, 2), dtype=np.int64)
    k = n + m - 2
    i = n - 1
    j = m - 1
    path[k, 0] = i
    path[k, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            up = acc[i - 1, j]
            left = acc[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        k -= 1
        path[k, 0] = i
        path[k, 1] = j
    return path[k:]


@nb.njit(cache=True, nogil=True)
def _sq_distance(a, b):
    return _cumcost(a, b, True)[-1, -1]


@nb.njit(cache=True, nogil=True)
def _sq_align_accumulate(center, seq, sums, counts):
    """Align seq to center under squared cost; add aligned values into sums."""
    acc = _cumcost(center, seq, True)
    path = _backtrack(acc)
    for k in range(path.shape[0]):
        i = path[k, 0]
        j = path[k, 1]
        sums[i] += seq[j]
        counts[i] += 1.0
    return acc[-1, -1]


@dataclass
class WarpResult:
    distance: float
    path_length: int
    path: np.ndarray | None = None


def _as_sequence(values, label: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise EmptySequence(f"{label} must be a non-empty 1-D sequence")
    return arr


def dtw(a, b, keep_path: bool = False) -> WarpResult:
    """Exact warping distance with absolute local cost and no window.

    Returns the optimal cumulative |a_i - b_j| over all monotone paths
    using unit steps, plus the optimal path length (and the path itself
    when keep_path is set).
    """
    a = _as_sequence(a, "a")
    b = _as_sequence(b, "b")
    acc = _cumcost(a, b, False)
    path = _backtrack(acc)
    return WarpResult(
        distance=float(acc[-1, -1]),
        path_length=int(path.shape[0]),
        path=path if keep_path else None,
    )


def _resample(seq: np.ndarray, length: int) -> np.ndarray:
    if seq.size == length:
        return seq.copy()
    old = np.arange(seq.size, dtype=np.float64)
    new = np.linspace(0.0, seq.size - 1.0, length)
    return np.interp(new, old, seq)


@dataclass
class BarycenterResult:
    sequence: np.ndarray
    iterations: int
    inertia: float
    inertia_history: list[float] = field(default_factory=list)


def _medoid_index(seqs: list[np.ndarray]) -> int:
    if len(seqs) == 1:
        return 0
    totals = np.zeros(len(seqs))
    for i in range(len(seqs)):
        for j in range(i + 1, len(seqs)):
            d = _sq_distance(seqs[i], seqs[j])
            totals[i] += d
            totals[j] += d
    return int(np.argmin(totals))


def dba(sequences, max_iter: int = 30, tol: float = 1e-4) -> BarycenterResult:
    """Iterative barycenter of a set of sequences under warping alignment.

    Starts from the medoid resampled to the median input length, then
    repeatedly aligns every sequence to the current average and replaces
    each coordinate with the mean of the values aligned to it. Stops when
    the relative inertia improvement falls below tol or after max_iter
    refinements. Inertia is the summed squared alignment cost.
    """
    seqs = [_as_sequence(s, f"sequences[{k}]") for k, s in enumerate(sequences)]
    if not seqs:
        raise EmptyInput("dba needs at least one sequence")
    target_len = int(np.median([s.size for s in seqs]) + 0.5)
    center = _resample(seqs[_medoid_index(seqs)], target_len)

    def sweep(c: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        sums = np.zeros(c.size)
        counts = np.zeros(c.size)
        inertia = 0.0
        for s in seqs:
            inertia += _sq_align_accumulate(c, s, sums, counts)
        return inertia, sums, counts

    inertia, sums, counts = sweep(center)
    history = [float(inertia)]
    iterations = 0
    for _ in range(max_iter):
        center = sums / counts
        iterations += 1
        new_inertia, sums, counts = sweep(center)
        history.append(float(new_inertia))
        if inertia <= 0.0 or (inertia - new_inertia) / inertia < tol:
            inertia = new_inertia
            break
        inertia = new_inertia
    return BarycenterResult(
        sequence=center,
        iterations=iterations,
        inertia=float(inertia),
        inertia_history=history,
    )


@dataclass(frozen=True)
class DbaConfig:
    max_iter: int = 30
    tol: float = 1e-4


@dataclass
class Prototype:
    group: int
    channel: ChannelId
    sequence: np.ndarray
    iterations: int
    inertia: float


@dataclass
class DbaModel:
    prototypes: dict[tuple[int, ChannelId], Prototype]
    selected: list[ChannelId]
    norm: NormStats
    meta: dict = field(default_factory=dict)


def _group_channel_sets(train: list[tuple[ChannelSet, int]]) -> dict[int, list[ChannelSet]]:
    by_group: dict[int, list[ChannelSet]] = {g: [] for g in GROUPS}
    for cs, group in train:
        if group not in by_group:
            raise MissingGroup(f"group label {group} outside {GROUPS}")
        by_group[group].append(cs)
    missing = [g for g in GROUPS if not by_group[g]]
    if missing:
        raise MissingGroup(f"no training sessions for group(s) {missing}")
    return by_group


def train_dba(
    train: list[tuple[ChannelSet, int]],
    selected: list[ChannelId],
    cfg: DbaConfig = DbaConfig(),
    norm: NormStats | None = None,
    jobs: int | None = None,
) -> DbaModel:
    """Fit one barycenter prototype per (group, channel) on normalized data."""
    if not selected:
        raise EmptyInput("no channels selected")
    by_group = _group_channel_sets(train)
    if norm is None:
        norm = fit_norm([cs for cs, _ in train])
    normalized = {
        g: [apply_norm(cs, norm) for cs in sets] for g, sets in by_group.items()
    }

    pairs = [(g, ch) for g in GROUPS for ch in selected]

    def fit(pair: tuple[int, ChannelId]) -> Prototype:
        g, ch = pair
        seqs = [cs.channels[ch] for cs in normalized[g]]
        result = dba(seqs, max_iter=cfg.max_iter, tol=cfg.tol)
        return Prototype(
            group=g,
            channel=ch,
            sequence=result.sequence,
            iterations=result.iterations,
            inertia=result.inertia,
        )

    prototypes = {(p.group, p.channel): p for p in parallel_map(fit, pairs, jobs)}
    return DbaModel(prototypes=prototypes, selected=list(selected), norm=norm)


def channel_distance(model: DbaModel, cs_norm: ChannelSet, group: int, channel: ChannelId) -> float:
    """Path-length normalized distance of one normalized channel to one prototype."""
    proto = model.prototypes[(group, channel)]
    res = dtw(cs_norm.channels[channel], proto.sequence)
    return res.distance / res.path_length


def classify_dba(model: DbaModel, cs: ChannelSet) -> tuple[int, dict[int, float]]:
    """Nearest-prototype decision: lowest summed per-channel distance wins.

    Ties go to the lower group index.
    """
    for ch in model.selected:
        if ch not in cs.channels:
            raise MissingChannel(f"channel {ch.name} missing from input")
    cs_norm = apply_norm(cs, model.norm)
    scores: dict[int, float] = {}
    for g in GROUPS:
        scores[g] = sum(channel_distance(model, cs_norm, g, ch) for ch in model.selected)
    best = min(GROUPS, key=lambda g: (scores[g], g))
    return best, scores


def dba_to_dict(model: DbaModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "selected": [ch.name for ch in model.selected],
        "norm": model.norm.to_dict(),
        "prototypes": {
            str(g): {
                ch.name: {
                    "sequence": [float(v) for v in model.prototypes[(g, ch)].sequence],
                    "iterations": model.prototypes[(g, ch)].iterations,
                    "inertia": float(model.prototypes[(g, ch)].inertia),
                }
                for ch in model.selected
            }
            for g in GROUPS
        },
        "meta": model.meta,
    }


def dba_from_dict(d: dict) -> DbaModel:
    selected = [channel_by_name(name) for name in d["selected"]]
    norm = NormStats.from_dict(d["norm"])
    prototypes: dict[tuple[int, ChannelId], Prototype] = {}
    for g_txt, chans in d["prototypes"].items():
        g = int(g_txt)
        for name, payload in chans.items():
            ch = channel_by_name(name)
            prototypes[(g, ch)] = Prototype(
                group=g,
                channel=ch,
                sequence=np.asarray(payload["sequence"], dtype=np.float64),
                iterations=int(payload["iterations"]),
                inertia=float(payload["inertia"]),
            )
    return DbaModel(
        prototypes=prototypes,
        selected=selected,
        norm=norm,
        meta=dict(d.get("meta", {})),
    )
