"""Canonical session-log parsing, validation, and subject-level splits.

A session is stored as one CSV of stylus samples plus a `<name>.meta.json`
sidecar carrying the child id, age group, gender, and device metadata.
Splitting operates on children, never on sessions, so no child contributes
data to more than one of train/validation/evaluation.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    EmptySession,
    GroupTooSmall,
    MalformedRow,
    MissingColumn,
    MissingSidecar,
    NonMonotonicTimestamp,
    UnknownGroupLabel,
)

log = logging.getLogger(__name__)

GROUPS = (2, 3, 4, 5, 6, 7, 8)
GENDERS = ("F", "M", "U")

#: Sessions longer than this are suspicious but still accepted.
MAX_SESSION_MS = 120_000

CSV_COLUMNS = ("t_ms", "x", "y", "pressure", "action", "inside")

SPLIT_NAMES = ("train", "val", "eval")


class Action(str, Enum):
    DOWN = "down"
    UP = "up"


@dataclass(frozen=True)
class RawSample:
    """One stylus sample: time (ms), position (px), pressure, contact state."""

    t: int
    x: float
    y: float
    p: float
    action: Action
    inside: bool


@dataclass
class RawSession:
    child_id: str
    group: int
    gender: str
    samples: list[RawSample]
    device_meta: dict = field(default_factory=dict)
    session_index: int = 0
    source: str | None = None


@dataclass
class Stroke:
    """A maximal run of consecutive pen-down samples."""

    samples: list[RawSample]

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class SplitPlan:
    assignment: dict[str, str]
    seed: int

    def children(self, part: str) -> list[str]:
        return sorted(c for c, p in self.assignment.items() if p == part)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "assignment": dict(sorted(self.assignment.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(assignment=dict(d["assignment"]), seed=int(d["seed"]))


def _fmt_num(v: float) -> str:
    """Canonical text for a float: shortest repr, integers as 'n.0'."""
    return str(float(v))


def _parse_row(path: Path, lineno: int, row: list[str], idx: dict[str, int]) -> RawSample:
    if len(row) < len(CSV_COLUMNS):
        raise MalformedRow(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
    try:
        t = int(row[idx["t_ms"]])
        x = float(row[idx["x"]])
        y = float(row[idx["y"]])
        p = float(row[idx["pressure"]])
        action_txt = row[idx["action"]].strip()
        inside_txt = row[idx["inside"]].strip()
    except ValueError as exc:
        raise MalformedRow(f"{path}:{lineno}: {exc}") from exc
    if t < 0:
        raise MalformedRow(f"{path}:{lineno}: negative timestamp {t}")
    if x < 0 or y < 0:
        raise MalformedRow(f"{path}:{lineno}: negative coordinate ({x}, {y})")
    if not 0.0 <= p <= 1.0:
        raise MalformedRow(f"{path}:{lineno}: pressure {p} outside [0, 1]")
    if action_txt not in (Action.DOWN.value, Action.UP.value):
        raise MalformedRow(f"{path}:{lineno}: unknown action {action_txt!r}")
    action = Action(action_txt)
    if action is Action.UP and p != 0.0:
        raise MalformedRow(f"{path}:{lineno}: pen-up sample with nonzero pressure {p}")
    if inside_txt not in ("0", "1"):
        raise MalformedRow(f"{path}:{lineno}: inside flag {inside_txt!r} not 0/1")
    return RawSample(t=t, x=x, y=y, p=p, action=action, inside=inside_txt == "1")


def _check_stroke_times(path: Path, samples: list[RawSample]) -> None:
    # Duplicate timestamps are only legal across a pen-up boundary.
    prev: RawSample | None = None
    for s in samples:
        if s.action is Action.DOWN and prev is not None and prev.action is Action.DOWN:
            if s.t <= prev.t:
                raise NonMonotonicTimestamp(
                    f"{path}: duplicate pen-down timestamp {s.t} within a stroke"
                )
        prev = s


def sidecar_path(csv_path: Path | str) -> Path:
    return Path(csv_path).with_suffix(".meta.json")


def _read_sidecar(path: Path) -> dict:
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise MissingSidecar(f"{path}: sidecar {meta_path.name} not found")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    for key in ("child_id", "group", "gender"):
        if key not in meta:
            raise MissingColumn(f"{meta_path}: sidecar missing key {key!r}")
    return meta


def parse_session(path: Path | str, session_index: int = 0) -> RawSession:
    """Parse one canonical session CSV plus its metadata sidecar.

    Samples are sorted by timestamp (stable, so file order breaks ties);
    any malformed row aborts the parse.
    """
    path = Path(path)
    meta = _read_sidecar(path)
    group = meta["group"]
    if not isinstance(group, int) or group not in GROUPS:
        raise UnknownGroupLabel(f"{path}: group {group!r} not in {GROUPS}")
    gender = meta["gender"]
    if gender not in GENDERS:
        raise UnknownGroupLabel(f"{path}: gender {gender!r} not in {GENDERS}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptySession(f"{path}: file is empty")
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s): {', '.join(missing)}")
        idx = {c: header.index(c) for c in CSV_COLUMNS}
        samples = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            samples.append(_parse_row(path, lineno, row, idx))

    if not samples:
        raise EmptySession(f"{path}: no samples")
    samples.sort(key=lambda s: s.t)
    _check_stroke_times(path, samples)

    duration = samples[-1].t - samples[0].t
    if duration > MAX_SESSION_MS:
        log.warning("session duration %d ms exceeds the %d ms cap (%s)", duration, MAX_SESSION_MS, path)

    return RawSession(
        child_id=str(meta["child_id"]),
        group=group,
        gender=gender,
        samples=samples,
        device_meta=dict(meta.get("device", {})),
        session_index=session_index,
        source=str(path),
    )


def serialize_session(session: RawSession, csv_path: Path | str) -> Path:
    """Write a session in canonical form (CSV + sidecar); returns the CSV path."""
    csv_path = Path(csv_path)
    lines = [",".join(CSV_COLUMNS)]
    for s in session.samples:
        lines.append(
            f"{s.t},{_fmt_num(s.x)},{_fmt_num(s.y)},{_fmt_num(s.p)},"
            f"{s.action.value},{1 if s.inside else 0}"
        )
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "child_id": session.child_id,
        "group": session.group,
        "gender": session.gender,
        "device": session.device_meta,
    }
    sidecar_path(csv_path).write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return csv_path


def load_sessions(data_dir: Path | str) -> list[RawSession]:
    """Parse every session CSV under a directory, in sorted file order."""
    data_dir = Path(data_dir)
    paths = sorted(p for p in data_dir.glob("*.csv"))
    if not paths:
        raise EmptySession(f"{data_dir}: no session CSV files")
    sessions = []
    counters: dict[str, int] = {}
    for p in paths:
        s = parse_session(p)
        s.session_index = counters.get(s.child_id, 0)
        counters[s.child_id] = s.session_index + 1
        sessions.append(s)
    return sessions


def segment_strokes(session: RawSession) -> list[Stroke]:
    """Partition pen-down samples into maximal contiguous runs.

    Pen-up samples only delimit strokes and are dropped; sample order is
    preserved within and across strokes.
    """
    strokes: list[Stroke] = []
    current: list[RawSample] = []
    for s in session.samples:
        if s.action is Action.DOWN:
            current.append(s)
        elif current:
            strokes.append(Stroke(current))
            current = []
    if current:
        strokes.append(Stroke(current))
    return strokes


def _cell_counts(n: int) -> tuple[int, int, int]:
    """Per-cell train/val/eval counts: 20% to eval, then 20% of the rest to val."""
    n_eval = int(0.2 * n + 0.5)
    rest = n - n_eval
    n_val = int(0.2 * rest + 0.5)
    return n - n_eval - n_val, n_val, n_eval


def make_split(sessions: list[RawSession], seed: int) -> SplitPlan:
    """Build a stratified child-level split plan.

    Stratification cells are (group, gender); each cell sends 20% (rounded
    half up) of its children to evaluation and 20% of the remainder to
    validation. Cells are processed largest first, ties broken by lower
    group index then gender, so the plan is a pure function of the input
    children and the seed.
    """
    children: dict[str, tuple[int, str]] = {}
    for s in sessions:
        cell = (s.group, s.gender)
        if s.child_id in children:
            # A child re-acquired later may carry a newer label; keep the
            # lowest cell so the assignment stays order-independent.
            children[s.child_id] = min(children[s.child_id], cell)
        else:
            children[s.child_id] = cell

    per_group: dict[int, int] = {}
    cells: dict[tuple[int, str], list[str]] = {}
    for child, cell in children.items():
        cells.setdefault(cell, []).append(child)
        per_group[cell[0]] = per_group.get(cell[0], 0) + 1

    for g in sorted(per_group):
        if per_group[g] < 5:
            raise GroupTooSmall(f"group {g} has {per_group[g]} children; at least 5 required")

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    order = sorted(cells, key=lambda c: (-len(cells[c]), c[0], c[1]))
    for cell in order:
        kids = sorted(cells[cell])
        perm = rng.permutation(len(kids))
        kids = [kids[i] for i in perm]
        n_train, n_val, n_eval = _cell_counts(len(kids))
        for child in kids[:n_eval]:
            assignment[child] = "eval"
        for child in kids[n_eval:n_eval + n_val]:
            assignment[child] = "val"
        for child in kids[n_eval + n_val:]:
            assignment[child] = "train"
    return SplitPlan(assignment=assignment, seed=seed)


def split_sessions(
    sessions: list[RawSession], plan: SplitPlan
) -> dict[str, list[RawSession]]:
    """Group sessions by the split part their child belongs to."""
    parts: dict[str, list[RawSession]] = {name: [] for name in SPLIT_NAMES}
    for s in sessions:
        part = plan.assignment.get(s.child_id)
        if part is None:
            raise DataError(f"child {s.child_id} missing from split plan")
        parts[part].append(s)
    return parts
