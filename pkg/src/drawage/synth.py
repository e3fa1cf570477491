"""Deterministic generator of drawing-test-like sessions.

The generated strokes are smoothed random walks whose speed, pressure,
heading wobble, stroke counts, and inside-the-boundary rates follow
per-group profiles. A single separability knob interpolates every profile
between "all groups identical" (sigma 0) and the well-separated defaults
(sigma 1), which makes chance-level and high-accuracy behaviour equally
easy to provoke. No claim of perceptual realism is made.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import Action, GROUPS, RawSample, RawSession, serialize_session

#: Sample period of the virtual tablet, in milliseconds.
SAMPLE_MS = 10

CANVAS = 3000.0


@dataclass(frozen=True)
class GroupProfile:
    mean_speed: float          # px per sample
    speed_jitter: float        # per-sample noise
    speed_spread: float        # between-session spread
    pressure_mean: float
    pressure_std: float        # per-sample noise
    pressure_spread: float     # between-session spread
    tremor_amp: float          # heading wobble amplitude, radians
    tremor_freq: float         # wobble cycles per sample
    stroke_count: tuple[float, float]
    stroke_len: tuple[float, float]
    inside_prob: float
    gap_ms: float              # mean pen-up pause


def _default_profile(group: int) -> GroupProfile:
    i = group - GROUPS[0]
    return GroupProfile(
        mean_speed=3.0 + 1.8 * i,
        speed_jitter=0.6,
        speed_spread=0.5,
        pressure_mean=0.30 + 0.07 * i,
        pressure_std=0.05,
        pressure_spread=0.03,
        tremor_amp=0.48 - 0.06 * i,
        tremor_freq=0.22,
        stroke_count=(3.0 + 0.5 * i, 5.0 + 0.5 * i),
        stroke_len=(10.0 + 3.0 * i, 24.0 + 7.0 * i),
        inside_prob=0.30 + 0.10 * i,
        gap_ms=700.0 - 40.0 * i,
    )


DEFAULT_PROFILES: dict[int, GroupProfile] = {g: _default_profile(g) for g in GROUPS}


def blended_profile(group: int, sigma: float) -> GroupProfile:
    """Interpolate between the shared baseline (sigma 0) and the group default."""
    a = DEFAULT_PROFILES[group]
    b = DEFAULT_PROFILES[5]

    def lerp(x: float, y: float) -> float:
        return y + sigma * (x - y)

    return GroupProfile(
        mean_speed=lerp(a.mean_speed, b.mean_speed),
        speed_jitter=lerp(a.speed_jitter, b.speed_jitter),
        speed_spread=lerp(a.speed_spread, b.speed_spread),
        pressure_mean=lerp(a.pressure_mean, b.pressure_mean),
        pressure_std=lerp(a.pressure_std, b.pressure_std),
        pressure_spread=lerp(a.pressure_spread, b.pressure_spread),
        tremor_amp=lerp(a.tremor_amp, b.tremor_amp),
        tremor_freq=lerp(a.tremor_freq, b.tremor_freq),
        stroke_count=(lerp(a.stroke_count[0], b.stroke_count[0]), lerp(a.stroke_count[1], b.stroke_count[1])),
        stroke_len=(lerp(a.stroke_len[0], b.stroke_len[0]), lerp(a.stroke_len[1], b.stroke_len[1])),
        inside_prob=min(0.98, max(0.02, lerp(a.inside_prob, b.inside_prob))),
        gap_ms=lerp(a.gap_ms, b.gap_ms),
    )


@dataclass(frozen=True)
class SynthConfig:
    per_group: int
    seed: int
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.per_group < 1:
            raise ValueError("per_group must be >= 1")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [0, 1]")


def _reflect(v: float, lo: float, hi: float) -> float:
    if v < lo:
        return lo + (lo - v)
    if v > hi:
        return hi - (v - hi)
    return v


def _generate_session(
    profile: GroupProfile, rng: np.random.Generator, child_id: str, group: int, gender: str
) -> RawSession:
    n_strokes = int(rng.integers(round(profile.stroke_count[0]), round(profile.stroke_count[1]) + 1))
    speed = max(0.3, rng.normal(profile.mean_speed, profile.speed_spread))
    base_pressure = min(0.97, max(0.03, rng.normal(profile.pressure_mean, profile.pressure_spread)))
    x = float(rng.uniform(800.0, CANVAS - 800.0))
    y = float(rng.uniform(800.0, CANVAS - 800.0))
    t = 0
    samples: list[RawSample] = []
    for _ in range(n_strokes):
        length = int(rng.integers(round(profile.stroke_len[0]), round(profile.stroke_len[1]) + 1))
        heading = float(rng.uniform(0.0, 2.0 * math.pi))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        inside = bool(rng.random() < profile.inside_prob)
        for i in range(length):
            heading += float(rng.normal(0.0, 0.12))
            wobble = profile.tremor_amp * math.sin(2.0 * math.pi * profile.tremor_freq * i + phase)
            step = max(0.2, speed + float(rng.normal(0.0, profile.speed_jitter)))
            nx = x + step * math.cos(heading + wobble)
            ny = y + step * math.sin(heading + wobble)
            if not 0.0 <= nx <= CANVAS:
                nx = _reflect(nx, 0.0, CANVAS)
                heading = math.pi - heading
            if not 0.0 <= ny <= CANVAS:
                ny = _reflect(ny, 0.0, CANVAS)
                heading = -heading
            x, y = nx, ny
            p = min(0.99, max(0.01, base_pressure + float(rng.normal(0.0, profile.pressure_std))))
            samples.append(
                RawSample(t=t, x=round(x, 3), y=round(y, 3), p=round(p, 4),
                          action=Action.DOWN, inside=inside)
            )
            t += SAMPLE_MS
        samples.append(
            RawSample(t=t, x=round(x, 3), y=round(y, 3), p=0.0, action=Action.UP, inside=False)
        )
        gap = max(20, int(rng.normal(profile.gap_ms, profile.gap_ms * 0.25)))
        t += gap
    return RawSession(
        child_id=child_id,
        group=group,
        gender=gender,
        samples=samples,
        device_meta={"generator": "synth"},
    )


def generate_corpus(cfg: SynthConfig) -> list[RawSession]:
    """One session per synthetic child, deterministic for a fixed seed."""
    sessions = []
    for group in GROUPS:
        profile = blended_profile(group, cfg.sigma)
        for i in range(cfg.per_group):
            gender = "F" if i % 2 == 0 else "M"
            child_id = f"g{group}{gender.lower()}{i:03d}"
            rng = np.random.default_rng([cfg.seed, group, i])
            sessions.append(_generate_session(profile, rng, child_id, group, gender))
    return sessions


def write_corpus(sessions: list[RawSession], out_dir: Path | str) -> list[Path]:
    """Write sessions in the canonical CSV + sidecar layout."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [serialize_session(s, out_dir / f"{s.child_id}.csv") for s in sessions]
