"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line through the ``acceptance_line`` fixture;
the lines are repeated in the "acceptance criteria" section of the pytest
terminal summary. Run directly with ``python tests/test_acceptance.py``.
"""

import math

import numpy as np
import pytest

from angleform import analysis
from angleform.cli import audit_power
from angleform.control import evaluate_formation
from angleform.dynamics import rk4_step
from angleform.errors import FormationError
from angleform.geometry import TriangleGeometry, rotation, true_angle_jacobians
from angleform.sim import paper_scenario, run

from conftest import paper_desired_positions, stabilization

RANK_FLOOR = 1e-3


@pytest.fixture(scope="module")
def repro():
    """The paper run; an abort yields its partial log and the exception."""
    scenario = paper_scenario()
    try:
        return scenario, run(scenario), None
    except FormationError as exc:
        return scenario, exc.log, exc


def random_formation_state(rng):
    g = paper_scenario().graph
    while True:
        q = rng.uniform(-3, 3, size=(4, 2))
        ok = True
        for t in g.triangles:
            tri = TriangleGeometry.from_positions(*q[list(t.vertices)])
            area = abs(tri.z[2, 0] * tri.z[1, 1] - tri.z[2, 1] * tri.z[1, 0])
            ok &= tri.r.min() > 0.3 and area > 0.1
        if ok:
            return g, q, rng.uniform(0.2, 5, size=(2, 8))


def test_criterion_1_paper_reproduction(repro, acceptance_line):
    scenario, log, abort = repro
    if abort is not None:
        acceptance_line(1, False, f"repro aborted: {type(abort).__name__} {abort}")
        pytest.fail(f"repro aborted: {abort}")
    err = np.abs(log.cos_error).reshape(len(log), -1)
    terminal = err[-1]
    bounded = np.all(err.max(axis=0) < 2 * err[0])
    conv = analysis.convergence_report(log, scenario.maneuvers)
    z_norm = np.linalg.norm(scenario.maneuvers.z_star)
    leader = conv.leader_error[-1]
    vel = conv.velocity_errors[-1]
    ok = bool(np.all(terminal < 1e-2) and bounded and leader < 1e-2 * z_norm and np.all(vel < 1e-2))
    acceptance_line(1, ok, f"terminal |cos err| max {terminal.max():.3e}, sup/initial bounded={bounded}, "
                           f"leader {leader:.3e} (limit {1e-2 * z_norm:.3e}), max |v - v*| {vel.max():.3e}")
    assert ok


def test_criterion_2_energy_descent(acceptance_line):
    s = stabilization({"log_stride": 1})
    assert np.all(s.v0 == 0)
    log = run(s)
    rep = analysis.energy_report(log)
    rate, rate_t = rep.rate_check()
    inc, inc_t = rep.descent_check()
    ok = rate <= 1e-4 and inc <= 1e-6
    acceptance_line(2, ok, f"worst scaled rate residual {rate:.3e} at t={rate_t:g}, "
                           f"worst scaled H increase {inc:.3e} at t={inc_t:g}, {len(log) - 1} steps")
    assert ok


def test_criterion_3_power_balance(acceptance_line):
    rep = audit_power(stabilization(), samples=1000, seed=0)
    acceptance_line(3, rep["passed"], f"worst relative residual {rep['worst_residual']:.3e} over 1000 snapshots")
    assert rep["worst_residual"] < 1e-10


def test_criterion_4_jacobians(acceptance_line):
    fd = analysis.gradient_audit(100, seed=0, step=1e-6)
    rng = np.random.default_rng(1)
    row_sum = 0.0
    for _ in range(100):
        jac = true_angle_jacobians(TriangleGeometry.from_positions(*rng.uniform(-5, 5, size=(3, 2))))
        row_sum = max(row_sum, float(np.abs(jac.sum(axis=1)).max()))
    ok = fd < 1e-6 and row_sum <= 1e-12
    acceptance_line(4, ok, f"worst FD relative error {fd:.3e}, worst row sum {row_sum:.3e}")
    assert ok


def test_criterion_5_symmetries(acceptance_line):
    rng = np.random.default_rng(2)
    v0 = np.zeros((4, 2))
    worst_t = worst_r = worst_h = 0.0
    for _ in range(100):
        g, q, r_hat = random_formation_state(rng)
        gains = paper_scenario().gains
        f = evaluate_formation(g, q, v0, r_hat, gains).forces
        shift = rng.uniform(-50, 50, size=2)
        R = rotation(rng.uniform(-math.pi, math.pi))
        rho = rng.uniform(0.1, 10)
        ft = evaluate_formation(g, q + shift, v0, r_hat, gains).forces
        fr = evaluate_formation(g, q @ R.T, v0, r_hat, gains).forces
        fh = evaluate_formation(g, rho * q, v0, rho * r_hat, gains).forces
        worst_t = max(worst_t, np.abs(ft - f).max())
        worst_r = max(worst_r, np.abs(fr - f @ R.T).max())
        worst_h = max(worst_h, np.abs(fh - f / rho).max() / np.abs(f / rho).max())
    ok = worst_t <= 1e-12 and worst_r <= 1e-10 and worst_h <= 1e-10
    acceptance_line(5, ok, f"translation {worst_t:.3e}, rotation {worst_r:.3e}, homogeneity {worst_h:.3e} (relative)")
    assert ok


def test_criterion_6_rank(repro, acceptance_line):
    _, log, abort = repro
    minima = log.sigma_min.min(axis=0)
    along = bool(abort is None and np.all(minima > RANK_FLOOR))
    collinear = run(stabilization({
        "agents.positions": [[0, 0], [1, 0], [2, 0], [3, 0]], "duration": 0.0,
    }))
    flagged = float(collinear.sigma_min[0].min())
    ok = along and flagged < 1e-6
    where = f" (run aborted at t={abort.time:g})" if abort is not None else ""
    acceptance_line(6, ok, f"repro sigma_min minima {np.round(minima, 6).tolist()}{where}, "
                           f"collinear sigma_min {flagged:.3e}")
    assert ok


def test_criterion_7_equilibrium(acceptance_line):
    rng = np.random.default_rng(3)
    g = paper_scenario().graph
    gains = paper_scenario().gains
    worst = 0.0
    for _ in range(100):
        q = paper_desired_positions(rng.uniform(0.2, 20), rng.uniform(-math.pi, math.pi), rng.uniform(-100, 100, 2))
        r_hat = rng.uniform(0.1, 10, size=(2, 8))
        f = evaluate_formation(g, q, np.zeros((4, 2)), r_hat, gains).forces
        worst = max(worst, float(np.linalg.norm(f, axis=1).max()))
    ok = worst < 1e-12
    acceptance_line(7, ok, f"largest force magnitude {worst:.3e} over 100 similarity transforms")
    assert ok


def test_criterion_8_rk4_order(acceptance_line):
    def global_error(dt):
        x = 1.0
        for _ in range(int(round(1 / dt))):
            x = rk4_step(lambda y: -y, x, dt)
        return abs(x - math.exp(-1))

    e1, e2 = global_error(0.1), global_error(0.05)
    ratio = e1 / e2
    ok = e1 < 1e-7 and 12 <= ratio <= 20
    acceptance_line(8, ok, f"error at dt=0.1 {e1:.3e} (limit 1e-7), halving ratio {ratio:.2f}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
