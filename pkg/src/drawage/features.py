"""Derivation of the 25 per-sample channels of a drawing session.

All kinematic quantities are computed stroke by stroke and concatenated in
time order, so pen-up gaps never leak into derivatives or windows. Every
channel has exactly one value per pen-down sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyPenDown, MissingChannel
from .ingest import RawSession, segment_strokes

log = logging.getLogger(__name__)

#: Guard against divisions by zero and log singularities.
EPS = 1e-8


class ChannelId(IntEnum):
    """The 25 derived channels, in canonical column order."""

    X = 1
    Y = 2
    Z = 3
    Theta = 4
    V = 5
    Rho = 6
    A = 7
    dX = 8
    dY = 9
    dZ = 10
    dTheta = 11
    dV = 12
    dRho = 13
    dA = 14
    ddX = 15
    ddY = 16
    Vr = 17
    Alpha = 18
    dAlpha = 19
    Sin = 20
    Cos = 21
    R5 = 22
    R7 = 23
    Inside = 24
    T = 25


CHANNELS: tuple[ChannelId, ...] = tuple(ChannelId)

#: Channels that z-scoring leaves untouched (binary flags stay binary).
UNNORMALIZED: frozenset[ChannelId] = frozenset({ChannelId.Inside})


def channel_by_name(name: str) -> ChannelId:
    try:
        return ChannelId[name]
    except KeyError:
        raise MissingChannel(f"unknown channel name {name!r}") from None


@dataclass
class ChannelSet:
    """All 25 channels of one session, equal length, time-aligned."""

    child_id: str
    session_index: int
    channels: dict[ChannelId, np.ndarray]

    @property
    def length(self) -> int:
        return len(self.channels[ChannelId.X])


@dataclass
class NormStats:
    """Per-channel z-score statistics fitted on training data only."""

    mean: dict[ChannelId, float]
    std: dict[ChannelId, float]
    constant: frozenset[ChannelId]

    def to_dict(self) -> dict:
        return {
            "mean": {ch.name: self.mean[ch] for ch in CHANNELS},
            "std": {ch.name: self.std[ch] for ch in CHANNELS},
            "constant": sorted(ch.name for ch in self.constant),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            mean={channel_by_name(k): float(v) for k, v in d["mean"].items()},
            std={channel_by_name(k): float(v) for k, v in d["std"].items()},
            constant=frozenset(channel_by_name(k) for k in d["constant"]),
        )


def derivative(seq) -> np.ndarray:
    """Second-order regression derivative, one value per input sample.

    d_n = [(s_{n+1} - s_{n-1}) + 2 (s_{n+2} - s_{n-2})] / 10, with the
    sequence replicated at both ends so the output keeps the input length.
    Units are input units per sample.
    """
    s = np.asarray(seq, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("derivative expects a non-empty 1-D sequence")
    p = np.concatenate([s[:1], s[:1], s, s[-1:], s[-1:]])
    return ((p[3:-1] - p[1:-3]) + 2.0 * (p[4:] - p[:-4])) / 10.0


def _consecutive_angle(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Heading between consecutive samples; the first sample copies the second."""
    if xs.size == 1:
        return np.zeros(1)
    alpha = np.empty_like(xs)
    alpha[1:] = np.arctan2(np.diff(ys), np.diff(xs))
    alpha[0] = alpha[1]
    return alpha


def _window_extrema(values: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    # Edge replication yields the same min/max as a truncated window.
    hw = width // 2
    padded = np.pad(values, hw, mode="edge")
    windows = sliding_window_view(padded, width)
    return windows.min(axis=1), windows.max(axis=1)


def _speed_ratio(v: np.ndarray, width: int = 5) -> np.ndarray:
    vmin, vmax = _window_extrema(v, width)
    return vmin / (vmax + EPS)


def _length_width_ratio(xs: np.ndarray, ys: np.ndarray, width: int) -> np.ndarray:
    """Path length over horizontal extent in a centered window, truncated at stroke ends."""
    n = xs.size
    hw = width // 2
    seg = np.hypot(np.diff(xs), np.diff(ys))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    pos = np.arange(n)
    lo = np.clip(pos - hw, 0, n - 1)
    hi = np.clip(pos + hw, 0, n - 1)
    lengths = cum[hi] - cum[lo]
    xmin, xmax = _window_extrema(xs, width)
    return lengths / (xmax - xmin + EPS)


def _stroke_channels(xs: np.ndarray, ys: np.ndarray, zs: np.ndarray) -> dict[ChannelId, np.ndarray]:
    dx = derivative(xs)
    dy = derivative(ys)
    theta = np.arctan2(dy, dx)
    v = np.hypot(dx, dy)
    # Angles are unwrapped before differentiating so a crossing of the
    # +/- pi cut does not masquerade as a curvature spike.
    dtheta = derivative(np.unwrap(theta))
    rho = np.log(v / (np.abs(dtheta) + EPS) + EPS)
    dv = derivative(v)
    a = np.hypot(dv, v * dtheta)
    alpha = _consecutive_angle(xs, ys)
    return {
        ChannelId.X: xs,
        ChannelId.Y: ys,
        ChannelId.Z: zs,
        ChannelId.Theta: theta,
        ChannelId.V: v,
        ChannelId.Rho: rho,
        ChannelId.A: a,
        ChannelId.dX: dx,
        ChannelId.dY: dy,
        ChannelId.dZ: derivative(zs),
        ChannelId.dTheta: dtheta,
        ChannelId.dV: dv,
        ChannelId.dRho: derivative(rho),
        ChannelId.dA: derivative(a),
        ChannelId.ddX: derivative(dx),
        ChannelId.ddY: derivative(dy),
        ChannelId.Vr: _speed_ratio(v),
        ChannelId.Alpha: alpha,
        ChannelId.dAlpha: derivative(np.unwrap(alpha)),
        ChannelId.Sin: np.sin(alpha),
        ChannelId.Cos: np.cos(alpha),
        ChannelId.R5: _length_width_ratio(xs, ys, 5),
        ChannelId.R7: _length_width_ratio(xs, ys, 7),
    }


def extract_channels(session: RawSession) -> ChannelSet:
    """Compute all 25 channels for one session.

    Raises EmptyPenDown when the session never touches the surface.
    """
    strokes = segment_strokes(session)
    if not strokes:
        raise EmptyPenDown(f"session {session.child_id} has no pen-down samples")

    per_stroke: list[dict[ChannelId, np.ndarray]] = []
    inside_parts: list[np.ndarray] = []
    t_parts: list[np.ndarray] = []
    t0 = session.samples[0].t
    for stroke in strokes:
        xs = np.array([s.x for s in stroke.samples], dtype=np.float64)
        ys = np.array([s.y for s in stroke.samples], dtype=np.float64)
        zs = np.array([s.p for s in stroke.samples], dtype=np.float64)
        per_stroke.append(_stroke_channels(xs, ys, zs))
        inside_parts.append(np.array([1.0 if s.inside else 0.0 for s in stroke.samples]))
        t_parts.append(np.array([float(s.t - t0) for s in stroke.samples]))

    channels = {
        ch: np.concatenate([p[ch] for p in per_stroke])
        for ch in per_stroke[0]
    }
    channels[ChannelId.Inside] = np.concatenate(inside_parts)
    channels[ChannelId.T] = np.concatenate(t_parts)
    return ChannelSet(
        child_id=session.child_id,
        session_index=session.session_index,
        channels=channels,
    )


def fit_norm(train: list[ChannelSet]) -> NormStats:
    """Pooled per-channel mean and population std over all training sessions.

    Channels that are constant on the training data get std 1 and are
    flagged so downstream consumers can tell silence from scale.
    """
    if not train:
        raise ValueError("fit_norm needs at least one training ChannelSet")
    mean: dict[ChannelId, float] = {}
    std: dict[ChannelId, float] = {}
    constant: set[ChannelId] = set()
    for ch in CHANNELS:
        pooled = np.concatenate([cs.channels[ch] for cs in train])
        mu = float(pooled.mean())
        sd = float(pooled.std())
        # A std at float-noise scale would amplify rounding, not signal.
        if sd <= 1e-12 * max(1.0, abs(mu)):
            constant.add(ch)
            sd = 1.0
            log.warning("channel %s is constant on the training data", ch.name)
        mean[ch] = mu
        std[ch] = sd
    return NormStats(mean=mean, std=std, constant=frozenset(constant))


def apply_norm(cs: ChannelSet, stats: NormStats) -> ChannelSet:
    """Z-score every channel except the binary ones."""
    out: dict[ChannelId, np.ndarray] = {}
    for ch, values in cs.channels.items():
        if ch in UNNORMALIZED:
            out[ch] = values.copy()
        else:
            out[ch] = (values - stats.mean[ch]) / stats.std[ch]
    return ChannelSet(child_id=cs.child_id, session_index=cs.session_index, channels=out)


def dump_channels_csv(cs: ChannelSet, path) -> None:
    """Write one session's channels as a 25-column CSV for inspection."""
    header = ",".join(ch.name for ch in CHANNELS)
    cols = [cs.channels[ch] for ch in CHANNELS]
    lines = [header]
    for i in range(cs.length):
        lines.append(",".join(str(float(col[i])) for col in cols))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
