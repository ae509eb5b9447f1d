import numpy as np
import pytest

from biomotion.motion import Joint, MotionSequence, Skeleton


def biped(foot_gap=0.3):
    """Pelvis with two feet; feet are the lowest candidates."""
    return Skeleton((
        Joint("pelvis", None, (0.0, 0.9, 0.0)),
        Joint("l_foot", 0, (0.0, -0.9, foot_gap / 2)),
        Joint("r_foot", 0, (0.0, -0.9, -foot_gap / 2)),
    ), foot_left=1, foot_right=2, lowest_candidates=(1, 2))


def static_biped(T=40, fps=20.0, foot_gap=0.3):
    skel = biped(foot_gap)
    frame = np.array([[0.0, 0.9, 0.0], [0.0, 0.0, foot_gap / 2], [0.0, 0.0, -foot_gap / 2]])
    pos = np.repeat(frame[None], T, axis=0)
    return MotionSequence(fps, pos, tuple(skel.names)), skel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria outcomes, printed once at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(n: int, ok: bool, detail: str):
    CRITERIA[n] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
