from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from drawage.ingest import Action, RawSample, RawSession

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criterion outcomes after capture is released."""
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for num, status, title in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(f"ACCEPTANCE {num:2d} {status}  {title}")


def make_samples(spec: list[tuple[int, float, float, float, str, int]]) -> list[RawSample]:
    return [
        RawSample(t=t, x=x, y=y, p=p, action=Action(action), inside=bool(inside))
        for t, x, y, p, action, inside in spec
    ]


def make_session(
    samples: list[RawSample],
    child_id: str = "c0",
    group: int = 5,
    gender: str = "F",
) -> RawSession:
    return RawSession(child_id=child_id, group=group, gender=gender, samples=samples)


def pen_down_track(
    xs, ys, ps=None, dt: int = 10, inside: bool = True, t0: int = 0
) -> list[RawSample]:
    """All-pen-down samples following the given coordinates."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if ps is None:
        ps = np.full(xs.size, 0.5)
    return [
        RawSample(t=t0 + dt * i, x=float(xs[i]), y=float(ys[i]), p=float(ps[i]),
                  action=Action.DOWN, inside=inside)
        for i in range(xs.size)
    ]


@pytest.fixture
def line_session() -> RawSession:
    """Constant-speed horizontal stroke: x = 10 n, y = 0, 20 samples."""
    xs = 10.0 * np.arange(20)
    ys = np.zeros(20)
    return make_session(pen_down_track(xs, ys))


@pytest.fixture
def circle_session() -> RawSession:
    """Radius-50 circle traversed at constant speed over 200 samples."""
    n = 200
    angles = 2.0 * np.pi * np.arange(n) / n
    xs = 500.0 + 50.0 * np.cos(angles)
    ys = 500.0 + 50.0 * np.sin(angles)
    return make_session(pen_down_track(xs, ys))
