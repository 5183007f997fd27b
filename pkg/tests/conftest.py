import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from angleform.sim import PAPER_CONFIG, Scenario, apply_overrides

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PAPER_Q = np.array([[0.9, 2.2], [2.2, 2.8], [1.8, 1.1], [3.1, 1.9]])

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record a PASS/FAIL line that is echoed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def scenario_from(overrides=None, **sections) -> Scenario:
    cfg = apply_overrides(PAPER_CONFIG, overrides or {})
    cfg.update(sections)
    return Scenario.from_dict(cfg)


def stabilization(overrides=None) -> Scenario:
    base = {"maneuvers.scale_orientation": False, "maneuvers.velocity_tracking": False}
    base.update(overrides or {})
    return scenario_from(base)


def shape_positions(theta: float, phi: float, scale=1.0, angle=0.0, offset=(0.0, 0.0)) -> np.ndarray:
    """Vertices (roles 1, 2, 3) of a triangle with interior angle ``theta`` at
    vertex 1 and ``phi`` at vertex 3, built from the law of sines."""
    third = math.pi - theta - phi
    # side q1q2 is opposite vertex 3 (angle phi), side q1q3 opposite vertex 2
    r_k = scale * math.sin(phi)
    r_j = scale * math.sin(third)
    q = np.array([[0.0, 0.0], [r_k, 0.0], [r_j * math.cos(theta), r_j * math.sin(theta)]])
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return q @ rot.T + np.asarray(offset)


def paper_desired_positions(scale=1.0, angle=0.0, offset=(0.0, 0.0)) -> np.ndarray:
    """Four agents at the paper's desired shape: triangle (1,2,3) with
    theta=pi/2 at 1, phi=pi/4 at 3; triangle (2,3,4) with theta=pi/4 at 2,
    phi=pi/4 at 4."""
    q123 = shape_positions(math.pi / 2, math.pi / 4)
    q1, q2, q3 = q123
    # triangle 2 has roles (2, 3, 4): angle pi/4 at node 2, pi/4 at node 4,
    # so pi/2 at node 3 and node 4 sits at distance |q2q3| from 3, rotated.
    d = q3 - q2
    side = np.linalg.norm(d)
    u = d / side
    cands = []
    for sgn in (1, -1):
        rot = np.array([[0.0, -sgn], [sgn, 0.0]])
        cands.append(q3 + side * (rot @ u))
    # pick the candidate on the far side of edge 2-3 from node 1
    def side_of(p):
        w = p - q2
        return np.sign(d[0] * w[1] - d[1] * w[0])

    q4 = cands[0] if side_of(cands[0]) != side_of(q1) else cands[1]
    q = np.array([q1, q2, q3, q4])
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return scale * q @ rot.T + np.asarray(offset)
