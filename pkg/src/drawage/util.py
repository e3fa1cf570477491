"""Shared helpers: canonical JSON output and an ordered thread map."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path


def round_floats(obj, ndigits: int | None):
    """Recursively round floats so canonical JSON output is byte-stable.

    Non-finite floats are rejected: canonical artifacts must stay valid JSON.
    """
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite value {obj!r} cannot be serialized")
        return round(obj, ndigits) if ndigits is not None else obj
    if isinstance(obj, dict):
        return {k: round_floats(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, ndigits) for v in obj]
    return obj


def canonical_dumps(obj, ndigits: int | None = None) -> str:
    """Serialize with sorted keys; trailing newline so files end cleanly."""
    return json.dumps(round_floats(obj, ndigits), sort_keys=True, indent=2) + "\n"


def write_json(path, obj, ndigits: int | None = None) -> Path:
    path = Path(path)
    path.write_text(canonical_dumps(obj, ndigits), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def parallel_map(fn, items, jobs: int | None = None) -> list:
    """Map fn over items preserving input order; threads unless jobs == 1.

    Tasks must be independent; results never depend on completion order.
    """
    items = list(items)
    if jobs == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
