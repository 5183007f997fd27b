"""Command-line front end: ``angleform run | repro-paper | audit | validate``.

Exit status: 0 when all requested work succeeded, 1 when a simulation aborts
or an audit fails, 2 for unreadable or invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .errors import ConfigError, FormationError
from .geometry import ANGLE_NAMES
from .sim import (
    Scenario,
    TrajectoryLog,
    load_scenario,
    paper_scenario,
    parse_override,
    run,
    write_energy_csv,
    write_figure_csvs,
    write_trajectory_csv,
)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

ENERGY_RATE_TOL = 1e-4
ENERGY_DESCENT_TOL = 1e-6
ANALYTIC_SIGN_TOL = 1e-12
POWER_TOL = 1e-10
GRADIENT_TOL = 1e-6
CHECKS = ("energy", "power", "rank", "gradients")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _terminal_lines(log: TrajectoryLog, scenario: Scenario) -> list[str]:
    if len(log) == 0:
        return ["no logged rows"]
    conv = analysis.convergence_report(log, scenario.maneuvers)
    lines = [f"t_final = {log.t[-1]:.6g}", "terminal |cos error|:"]
    for l in range(log.cos_error.shape[1]):
        for a, name in enumerate(ANGLE_NAMES):
            lines.append(f"  {name}{l + 1:<3d} {abs(log.cos_error[-1, l, a]):.3e}")
    mv = scenario.maneuvers
    if mv.scale_orientation:
        lines.append(f"leader |z - z*| = {conv.leader_error[-1]:.3e}  (|z*| = {np.linalg.norm(mv.z_star):.6g})")
    if mv.velocity_tracking:
        for lab, e in zip(log.labels, conv.velocity_errors[-1]):
            lines.append(f"agent {lab} |v - v*| = {e:.3e}")
    lines.append(f"min sigma_min per triangle = {np.round(log.sigma_min.min(axis=0), 6).tolist()}")
    lines.append(f"min r_hat = {log.r_hat.min():.6g}")
    lines.append(f"H(0) = {log.energy_total[0]:.10g}  H(end) = {log.energy_total[-1]:.10g}")
    return lines


def _load(path: str, overrides: list[str] | None = None) -> Scenario:
    scenario = load_scenario(path)
    if overrides:
        scenario = scenario.with_overrides(dict(parse_override(o) for o in overrides))
    return scenario


def cmd_run(args) -> int:
    try:
        scenario = _load(args.scenario, args.set)
    except (ConfigError, FormationError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status, abort = EXIT_OK, None
    try:
        log = run(scenario)
    except FormationError as exc:
        log, abort, status = exc.log, exc, EXIT_FAIL
    write_trajectory_csv(log, out / "trajectory.csv")
    write_energy_csv(log, out / "energy.csv")
    lines = [
        f"scenario: {args.scenario}",
        f"label: {scenario.label}",
        "overrides: " + (", ".join(args.set) if args.set else "none"),
        f"dt = {scenario.dt:g}, duration = {scenario.duration:g}, log_stride = {scenario.log_stride}",
        f"agents = {scenario.graph.node_count}, triangles = {scenario.graph.triangle_count}",
    ]
    if abort is not None:
        lines.append(f"ABORTED {type(abort).__name__} {abort}")
    else:
        lines.append("status: completed")
    lines += _terminal_lines(log, scenario)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if abort is not None:
        _err(f"{type(abort).__name__} {abort}")
    return status


def cmd_repro_paper(args) -> int:
    scenario = paper_scenario()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status, abort = EXIT_OK, None
    try:
        log = run(scenario)
    except FormationError as exc:
        log, abort, status = exc.log, exc, EXIT_FAIL
    write_figure_csvs(log, scenario, out)
    print("paper scenario: 4 agents, 2 triangles, maneuvers on")
    if abort is not None:
        print(f"ABORTED {type(abort).__name__} {abort}")
    print("\n".join(_terminal_lines(log, scenario)))
    if abort is not None:
        _err(f"{type(abort).__name__} {abort}")
    return status


def audit_energy(scenario: Scenario) -> dict:
    analysis.require_shared_springs(scenario.gains)
    stab = scenario.with_overrides({"maneuvers.scale_orientation": False, "maneuvers.velocity_tracking": False,
                                    "log_stride": 1})
    try:
        log = run(stab)
    except FormationError as exc:
        return {"passed": False, "aborted": type(exc).__name__, "time": exc.time, "message": str(exc)}
    rep = analysis.energy_report(log)
    rate, rate_t = rep.rate_check()
    desc, desc_t = rep.descent_check()
    top = rep.max_analytic()
    return {
        "passed": bool(rate <= ENERGY_RATE_TOL and desc <= ENERGY_DESCENT_TOL and top <= ANALYTIC_SIGN_TOL),
        "rate_residual": {"worst": rate, "time": rate_t, "tolerance": ENERGY_RATE_TOL},
        "descent": {"worst_increase": desc, "time": desc_t, "tolerance": ENERGY_DESCENT_TOL},
        "max_analytic_rate": top,
        "H_initial": float(rep.total[0]),
        "H_final": float(rep.total[-1]),
        "steps": len(log) - 1,
    }


def random_snapshot(rng, n: int, m: int, min_distance: float = 0.1, box: float = 5.0):
    """Random positions with pairwise distances above ``min_distance``,
    velocities in [-1, 1]^2 and estimates in [0.1, 10]."""
    while True:
        q = rng.uniform(-box, box, size=(n, 2))
        d = np.linalg.norm(q[:, None] - q[None], axis=-1)
        if np.all(d[np.triu_indices(n, 1)] > min_distance):
            break
    v = rng.uniform(-1.0, 1.0, size=(n, 2))
    r_hat = rng.uniform(0.1, 10.0, size=(m, 8))
    return q, v, r_hat


def audit_power(scenario: Scenario, samples: int = 1000, seed: int = 0) -> dict:
    g = scenario.graph
    gain = scenario.estimators.gain
    worst = analysis.power_balance_audit(g, scenario.q0, scenario.v0, scenario.estimators.r_hat, scenario.gains, gain)
    worst_at = "initial state"
    rng = np.random.default_rng(seed)
    for k in range(samples):
        q, v, r_hat = random_snapshot(rng, g.node_count, g.triangle_count)
        res = analysis.power_balance_audit(g, q, v, r_hat, scenario.gains, gain)
        if res > worst:
            worst, worst_at = res, f"random snapshot {k}"
    return {"passed": bool(worst < POWER_TOL), "worst_residual": worst, "where": worst_at,
            "samples": samples, "seed": seed, "tolerance": POWER_TOL}


def audit_rank(scenario: Scenario) -> dict:
    abort = None
    try:
        log = run(scenario)
    except FormationError as exc:
        log, abort = exc.log, exc
    rep = analysis.rank_audit(log.sigma_min)
    rep["argmin_time"] = [float(log.t[i]) for i in rep.pop("argmin")]
    rep["threshold"] = analysis.RANK_THRESHOLD
    if abort is not None:
        rep["passed"] = False
        rep["aborted"] = type(abort).__name__
        rep["time"] = abort.time
        rep["message"] = str(abort)
    return rep


def audit_gradients(samples: int = 100, seed: int = 0) -> dict:
    worst = analysis.gradient_audit(samples, seed)
    return {"passed": bool(worst < GRADIENT_TOL), "worst_relative_error": worst, "triangles": samples,
            "tolerance": GRADIENT_TOL}


def _describe_failure(name: str, rep: dict) -> str:
    if "aborted" in rep:
        return f"{name}: {rep['aborted']} {rep['message']}"
    if name == "energy":
        r, d = rep["rate_residual"], rep["descent"]
        return (f"energy: rate residual {r['worst']:.3e} at t={r['time']:.6g}, "
                f"largest H increase {d['worst_increase']:.3e} at t={d['time']:.6g}, "
                f"max analytic rate {rep['max_analytic_rate']:.3e}")
    if name == "power":
        return f"power: worst residual {rep['worst_residual']:.3e} at {rep['where']}"
    if name == "rank":
        return "rank: " + ", ".join(
            f"triangle {l + 1} sigma_min {m:.3e} at t={t:.6g}"
            for l, (m, t, f) in enumerate(zip(rep["minima"], rep["argmin_time"], rep["flagged"]))
            if f
        )
    return f"gradients: worst relative error {rep['worst_relative_error']:.3e}"


def cmd_audit(args) -> int:
    checks = CHECKS if "all" in args.check else tuple(dict.fromkeys(args.check))
    try:
        scenario = _load(args.scenario, args.set)
    except (ConfigError, FormationError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    report = {"scenario": str(args.scenario), "checks": {}}
    for name in checks:
        try:
            if name == "energy":
                rep = audit_energy(scenario)
            elif name == "power":
                rep = audit_power(scenario, args.samples, args.seed)
            elif name == "rank":
                rep = audit_rank(scenario)
            else:
                rep = audit_gradients(seed=args.seed)
        except ConfigError as exc:
            _err(f"{name}: {exc}")
            return EXIT_INPUT
        report["checks"][name] = rep
        print(f"{name}: {'PASS' if rep['passed'] else 'FAIL'}")
        if not rep["passed"]:
            _err(_describe_failure(name, rep))
    report["passed"] = all(r["passed"] for r in report["checks"].values())
    out = Path(args.report) if args.report else Path(f"audit_{'_'.join(checks)}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2) + "\n")
    print(f"report written to {out}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (ConfigError, FormationError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    g = scenario.graph
    print(f"{args.scenario}: valid ({g.node_count} agents, {g.edge_count} edges, {g.triangle_count} triangles, "
          f"{8 * g.triangle_count} estimators)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="angleform", description="Angle-based formation control simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario file and write CSV logs")
    r.add_argument("scenario")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario field (dotted path)")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("repro-paper", help="run the built-in four-agent scenario and write figure data")
    rp.add_argument("--out", required=True, help="output directory")
    rp.set_defaults(func=cmd_repro_paper)

    a = sub.add_parser("audit", help="run numerical audits; exit 0 iff all pass")
    a.add_argument("scenario")
    a.add_argument("--check", action="append", required=True, choices=CHECKS + ("all",))
    a.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario field (dotted path)")
    a.add_argument("--report", help="JSON report path (default audit_<checks>.json)")
    a.add_argument("--samples", type=int, default=1000, help="random snapshots for the power audit")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_audit)

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
