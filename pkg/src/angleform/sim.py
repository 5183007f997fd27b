"""Scenario definition, the closed-loop run, and trajectory logging.

A scenario is a nested mapping (YAML or JSON on disk) with the sections
``graph``, ``agents``, ``angles``, ``gains``, ``estimators``, ``maneuvers`` and
``integration``; see README.md for every field. :class:`Scenario` keeps the
mapping it was built from so runs can be echoed and overridden.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import analysis
from . import kernel
from .control import AngleGains, ManeuverConfig, desired_cosines, evaluate_formation, maneuver_forces
from .dynamics import AgentParams, rk4_step
from .errors import ConfigError, FormationError
from .estimator import SLOT_KEYS, EstimatorBank, bank_derivative, init_bank
from .geometry import ANGLE_NAMES, TERM_EDGE
from .graph import FormationGraph, build_triangulated_laman, sigma_min, triangle_geometries

PAPER_CONFIG = {
    "label": "paper-4-agent",
    "graph": {"seed": [1, 2], "attachments": [[3, 1, 2], [4, 2, 3]]},
    "agents": {
        "positions": {1: [0.9, 2.2], 2: [2.2, 2.8], 3: [1.8, 1.1], 4: [3.1, 1.9]},
        "velocities": 0.0,
        "mass": 1.0,
        "friction": 1.0,
    },
    "angles": {
        "unit": "rad",
        "triangles": [
            {"theta": math.pi / 2, "phi": math.pi / 4},
            {"theta": math.pi / 4, "phi": math.pi / 4},
        ],
    },
    "gains": {"spring": 10.0, "damper": 1.0},
    "estimators": {"initial": 1.0, "gain": 10.0},
    "maneuvers": {
        "leader": [1, 2],
        "z_star": [10.0, -10.0],
        "D_z": [0.8, 0.8],
        "v_star": [3.0, 3.0],
        "D_v": [1.8, 1.8],
        "scale_orientation": True,
        "velocity_tracking": True,
    },
    "integration": {"dt": 1e-3, "duration": 30.0, "log_stride": 10},
}

_INTEGRATION_KEYS = ("dt", "duration", "log_stride")


def _per_node(value, labels, name, default):
    """Expand a setting to one entry per node: a mapping keyed by node label,
    a list with one entry per node, or a single value shared by all."""
    if value is None:
        value = default
    if isinstance(value, dict):
        missing = [lab for lab in labels if lab not in value and str(lab) not in value]
        if missing:
            raise ConfigError(f"agents.{name} missing node(s) {missing}")
        return [value[lab] if lab in value else value[str(lab)] for lab in labels]
    if isinstance(value, (list, tuple)) and len(value) == len(labels) and len(labels) > 2:
        return list(value)
    return [value] * len(labels)


def _vec(v, name) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape == ():
        a = np.full(2, float(a))
    if a.shape != (2,) or not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be a finite 2-vector, got {v!r}")
    return a


def _section(cfg, name) -> dict:
    sec = cfg.get(name, {}) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sec


@dataclass
class Scenario:
    graph: FormationGraph
    q0: np.ndarray
    v0: np.ndarray
    params: list[AgentParams]
    gains: AngleGains
    estimators: EstimatorBank
    maneuvers: ManeuverConfig
    dt: float = 1e-3
    duration: float = 30.0
    log_stride: int = 1
    label: str = "scenario"
    config: dict = field(default_factory=dict, repr=False)

    @property
    def masses(self) -> np.ndarray:
        return np.array([p.mass for p in self.params])

    @property
    def friction(self) -> np.ndarray:
        return np.stack([p.friction for p in self.params])

    @property
    def node_labels(self) -> tuple:
        return self.graph.labels

    def validate(self) -> None:
        self.graph.validate()
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.duration >= 0:
            raise ConfigError(f"duration must be nonnegative, got {self.duration}")
        if int(self.log_stride) < 1:
            raise ConfigError(f"log_stride must be >= 1, got {self.log_stride}")
        triangle_geometries(self.graph, self.q0)

    @classmethod
    def from_dict(cls, cfg: dict) -> "Scenario":
        cfg = copy.deepcopy(cfg)
        try:
            return cls._from_dict(cfg)
        except FormationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed scenario: {exc!r}") from exc

    @classmethod
    def _from_dict(cls, cfg: dict) -> "Scenario":
        g = _section(cfg, "graph")
        if "seed" not in g:
            raise ConfigError("graph.seed is required")
        graph = build_triangulated_laman(tuple(g["seed"]), [tuple(a) for a in g.get("attachments", [])])
        labels = graph.labels
        m = graph.triangle_count

        ang = _section(cfg, "angles")
        unit = ang.get("unit", "rad")
        if unit not in ("rad", "deg"):
            raise ConfigError(f"angles.unit must be 'rad' or 'deg', got {unit!r}")
        scale = math.pi / 180 if unit == "deg" else 1.0
        tris = ang.get("triangles", [])
        if len(tris) != m:
            raise ConfigError(f"angles.triangles needs {m} entries, got {len(tris)}")
        graph = graph.with_angles([(float(t["theta"]) * scale, float(t["phi"]) * scale) for t in tris])
        for l, t in enumerate(tris):
            if t.get("roles") is not None:
                graph = graph.with_roles(l, [graph.index_of(lab) for lab in t["roles"]])

        ag = _section(cfg, "agents")
        if "positions" not in ag:
            raise ConfigError("agents.positions is required")
        q0 = np.array([_vec(x, "position") for x in _per_node(ag["positions"], labels, "positions", None)])
        v0 = np.array([_vec(x, "velocity") for x in _per_node(ag.get("velocities"), labels, "velocities", 0.0)])
        masses = _per_node(ag.get("mass"), labels, "mass", 1.0)
        frictions = _per_node(ag.get("friction"), labels, "friction", 1.0)
        params = []
        for mass, fr in zip(masses, frictions):
            fr = np.asarray(fr, dtype=float)
            params.append(AgentParams(float(mass), np.diag(fr) if fr.shape == (2,) else fr))

        gs = _section(cfg, "gains")
        spring = np.broadcast_to(np.asarray(gs.get("spring", 10.0), dtype=float), (m, 2, 3))
        damper = np.broadcast_to(np.asarray(gs.get("damper", 1.0), dtype=float), (m, 2, 3))
        gains = AngleGains(spring, damper)

        es = _section(cfg, "estimators")
        initial = es.get("initial", 1.0)
        if initial is True:
            initial = "true"
        geometry = triangle_geometries(graph, q0) if initial == "true" else None
        bank = init_bank(m, initial, es.get("gain", 10.0), geometry)

        mv = _section(cfg, "maneuvers")
        leader = mv.get("leader", [labels[0], labels[1]])
        maneuvers = ManeuverConfig(
            leader=(graph.index_of(leader[0]), graph.index_of(leader[1])),
            z_star=_vec(mv.get("z_star", [0.0, 0.0]), "z_star"),
            damping_z=mv.get("D_z", 1.0),
            v_star=_vec(mv.get("v_star", [0.0, 0.0]), "v_star"),
            damping_v=mv.get("D_v", 1.0),
            scale_orientation=bool(mv.get("scale_orientation", False)),
            velocity_tracking=bool(mv.get("velocity_tracking", False)),
        )

        it = _section(cfg, "integration")
        scenario = cls(
            graph=graph,
            q0=q0,
            v0=v0,
            params=params,
            gains=gains,
            estimators=bank,
            maneuvers=maneuvers,
            dt=float(it.get("dt", 1e-3)),
            duration=float(it.get("duration", 30.0)),
            log_stride=int(it.get("log_stride", 1)),
            label=str(cfg.get("label", "scenario")),
            config=cfg,
        )
        scenario.validate()
        return scenario

    def with_overrides(self, overrides: dict) -> "Scenario":
        return Scenario.from_dict(apply_overrides(self.config, overrides))


def apply_overrides(cfg: dict, overrides: dict) -> dict:
    """Return a copy of ``cfg`` with dotted-path overrides applied.

    Bare ``dt``, ``duration`` and ``log_stride`` address the integration section.
    """
    cfg = copy.deepcopy(cfg)
    for key, value in overrides.items():
        path = key.split(".")
        if len(path) == 1 and path[0] in _INTEGRATION_KEYS:
            path = ["integration", path[0]]
        node = cfg
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {key!r}: {part!r} is not a section")
        node[path[-1]] = value
    return cfg


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads exponent forms without a dot ("5e-4") as strings
        try:
            value = float(value)
        except ValueError:
            pass
    return key.strip(), value


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc.strerror}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return Scenario.from_dict(cfg)


def dump_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(_plain(scenario.config), sort_keys=False))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def paper_scenario() -> Scenario:
    """The four-agent, two-triangle scenario with maneuvers enabled."""
    return Scenario.from_dict(PAPER_CONFIG)


class ClosedLoop:
    """Right-hand side of the joint agent + estimator ODE on a flat vector."""

    def __init__(self, scenario: Scenario):
        self.s = scenario
        self.graph = scenario.graph
        self.n = scenario.graph.node_count
        self.m = scenario.graph.triangle_count
        self.tv = scenario.graph.triangle_vertices
        self.masses = scenario.masses
        self.friction = scenario.friction
        self.gain = scenario.estimators.gain

    def pack(self, q, p, r_hat) -> np.ndarray:
        return np.concatenate([np.ravel(q), np.ravel(p), np.ravel(r_hat)])

    def initial_state(self) -> np.ndarray:
        s = self.s
        return self.pack(s.q0, s.v0 * s.masses[:, None], s.estimators.r_hat)

    def unpack(self, x):
        """Split one state (or a stack of states along leading axes)."""
        x = np.asarray(x)
        lead = x.shape[:-1]
        a = 2 * self.n
        return (
            x[..., :a].reshape(lead + (self.n, 2)),
            x[..., a : 2 * a].reshape(lead + (self.n, 2)),
            x[..., 2 * a :].reshape(lead + (self.m, -1)),
        )

    def evaluate(self, x):
        q, p, r_hat = self.unpack(x)
        v = p / self.masses[:, None]
        ft = evaluate_formation(self.graph, q, v, r_hat, self.s.gains)
        u = ft.forces + maneuver_forces(q, v, self.friction, self.s.maneuvers)
        return q, p, r_hat, v, ft, u

    def __call__(self, x) -> np.ndarray:
        _, _, r_hat, v, ft, u = self.evaluate(x)
        p_dot = u - np.einsum("nij,nj->ni", self.friction, v)
        r_dot = bank_derivative(ft.geometry, v[self.tv], ft.term_efforts, r_hat, self.gain)
        return np.concatenate([v.ravel(), p_dot.ravel(), r_dot.ravel()])

    def kernel_args(self) -> tuple:
        """Parameters of :func:`angleform.kernel.rhs` after ``(x, out)``."""
        mv = self.s.maneuvers
        dv = np.broadcast_to(mv.damping_v, self.friction.shape)
        return (
            self.n,
            self.m,
            np.ascontiguousarray(self.tv, dtype=np.int64),
            1.0 / self.masses,
            np.ascontiguousarray(self.friction),
            np.ascontiguousarray(desired_cosines(self.graph)),
            self.s.gains.spring,
            self.s.gains.damper,
            np.ascontiguousarray(self.gain),
            np.array(mv.leader, dtype=np.int64),
            mv.z_star,
            mv.damping_z,
            mv.v_star,
            np.ascontiguousarray(dv),
            bool(mv.scale_orientation),
            bool(mv.velocity_tracking),
        )

    def fast_rhs(self, x) -> np.ndarray:
        """Compiled right-hand side; raises the same errors as the reference."""
        out = np.empty_like(x)
        if kernel.rhs(np.asarray(x, dtype=float), out, *self.kernel_args()) != kernel.OK:
            self(x)
            raise FormationError("compiled right-hand side rejected the state")
        return out


@dataclass
class TrajectoryLog:
    labels: tuple
    masses: np.ndarray
    t: np.ndarray  # (K,)
    q: np.ndarray  # (K, N, 2)
    p: np.ndarray  # (K, N, 2)
    u: np.ndarray  # (K, N, 2)
    cos_error: np.ndarray  # (K, M, 2)
    cos_rate: np.ndarray  # (K, M, 2)
    r_hat: np.ndarray  # (K, M, 8)
    r_true: np.ndarray  # (K, M, 8)
    sigma_min: np.ndarray  # (K, M)
    energy_kinetic: np.ndarray
    energy_angle: np.ndarray
    energy_estimator: np.ndarray
    energy_total: np.ndarray
    rate_analytic: np.ndarray

    @property
    def r_bar(self) -> np.ndarray:
        return self.r_hat - self.r_true

    @property
    def velocity(self) -> np.ndarray:
        return self.p / self.masses[None, :, None]

    def __len__(self) -> int:
        return self.t.size


def trajectory_log(loop: ClosedLoop, t, states) -> TrajectoryLog:
    """Compute every logged quantity from a (K, state) array in one pass."""
    states = np.asarray(states, dtype=float)
    t = np.asarray(t, dtype=float)
    if states.shape[0] == 0:
        z = np.zeros((0,))
        n, m = loop.n, loop.m
        return TrajectoryLog(
            loop.graph.labels, loop.masses, z, np.zeros((0, n, 2)), np.zeros((0, n, 2)), np.zeros((0, n, 2)),
            np.zeros((0, m, 2)), np.zeros((0, m, 2)), np.zeros((0, m, 8)), np.zeros((0, m, 8)),
            np.zeros((0, m)), z, z, z, z, z,
        )
    q, p, r_hat, v, ft, u = loop.evaluate(states)
    r_true = ft.geometry.r[..., TERM_EDGE]
    gains = loop.s.gains
    kin, ang, est = analysis.hamiltonian_terms(q, p, loop.masses, ft.error, r_hat, r_true, gains, loop.gain)
    rate = analysis.analytic_hamiltonian_rate(v, loop.friction, ft.jac, ft.rate, gains, loop.graph)
    return TrajectoryLog(
        loop.graph.labels, loop.masses, t, q, p, u, ft.error, ft.rate, r_hat, r_true,
        sigma_min(ft.jac_est), kin, ang, est, kin + ang + est, rate,
    )


def _integrate_reference(loop: ClosedLoop, x, n_steps: int, stride: int, dt: float):
    rows = [x]
    done = 0
    try:
        for step in range(1, n_steps + 1):
            x = rk4_step(loop, x, dt)
            done = step
            if step % stride == 0:
                rows.append(x)
    except FormationError as exc:
        return np.array(rows), exc, done
    return np.array(rows), None, done


def _integrate_compiled(loop: ClosedLoop, x, n_steps: int, stride: int, dt: float):
    states, status, done = kernel.integrate(x, n_steps, stride, dt, *loop.kernel_args())
    if status == kernel.OK:
        return states, None, done
    # Replay the failing step through the reference to get its exact error.
    x_last = kernel_state_at(loop, states[-1], (len(states) - 1) * stride, done, dt)
    try:
        rk4_step(loop, x_last, dt)
    except FormationError as exc:
        return states, exc, done
    return states, FormationError(f"compiled integrator stopped with status {status}"), done


def kernel_state_at(loop: ClosedLoop, x_logged, logged_step: int, target_step: int, dt: float):
    """Advance ``x_logged`` from ``logged_step`` to ``target_step`` with the compiled RK4."""
    if target_step == logged_step:
        return x_logged
    states, _, _ = kernel.integrate(np.array(x_logged), target_step - logged_step, target_step - logged_step,
                                    dt, *loop.kernel_args())
    return states[-1]


ENGINES = ("compiled", "reference")


def run(scenario: Scenario, engine: str = "compiled") -> TrajectoryLog:
    """Integrate the scenario with fixed-step RK4, logging every ``log_stride`` steps.

    ``engine="reference"`` steps the pure numpy right-hand side instead of the
    compiled one; both produce the same trajectory to rounding. Any
    FormationError raised mid-run is re-raised with the time of the last
    completed step set and the partial log attached as ``exc.log``.
    """
    if engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}, got {engine!r}")
    loop = ClosedLoop(scenario)
    x0 = loop.initial_state()
    try:
        loop(x0)
    except FormationError as exc:
        raise exc.at(0.0)
    n_steps = int(round(scenario.duration / scenario.dt))
    stride = int(scenario.log_stride)
    integrate = _integrate_compiled if engine == "compiled" else _integrate_reference
    states, exc, done = integrate(loop, x0, n_steps, stride, scenario.dt)
    t = np.arange(len(states)) * stride * scenario.dt
    log = trajectory_log(loop, t, states)
    if exc is not None:
        exc.at(done * scenario.dt)
        exc.log = log
        raise exc
    return log


# ---- CSV output -----------------------------------------------------------

FMT = "%.17g"


def _write_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns]) if columns else np.empty((0, 0))
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=FMT)


def estimator_labels(m: int) -> list[str]:
    return [f"T{l + 1}_a{role}_{angle}_{edge}" for l in range(m) for role, angle, edge in SLOT_KEYS]


def trajectory_columns(log: TrajectoryLog):
    header, cols = ["t"], [log.t]
    for n, lab in enumerate(log.labels):
        for name, arr in (("q", log.q), ("p", log.p), ("U", log.u)):
            for d, ax in enumerate("xy"):
                header.append(f"{name}{lab}_{ax}")
                cols.append(arr[:, n, d])
    m = log.cos_error.shape[1]
    for l in range(m):
        for a, name in enumerate(ANGLE_NAMES):
            header.append(f"cos_err_{name}{l + 1}")
            cols.append(log.cos_error[:, l, a])
        for a, name in enumerate(ANGLE_NAMES):
            header.append(f"cos_rate_{name}{l + 1}")
            cols.append(log.cos_rate[:, l, a])
        header.append(f"sigma_min{l + 1}")
        cols.append(log.sigma_min[:, l])
    labels = estimator_labels(m)
    r_hat = log.r_hat.reshape(len(log), -1)
    r_true = log.r_true.reshape(len(log), -1)
    for e, lab in enumerate(labels):
        header += [f"rhat_{lab}", f"r_{lab}", f"rbar_{lab}"]
        cols += [r_hat[:, e], r_true[:, e], r_hat[:, e] - r_true[:, e]]
    return header, cols


def write_trajectory_csv(log: TrajectoryLog, path) -> None:
    _write_csv(path, *trajectory_columns(log))


def write_energy_csv(log: TrajectoryLog, path) -> None:
    rep = analysis.energy_report(log)
    _write_csv(
        path,
        ["t", "kinetic", "angle_potential", "estimator_potential", "total", "dHdt_numeric", "dHdt_analytic", "residual"],
        [rep.time, rep.kinetic, rep.angle, rep.estimator, rep.total, rep.rate_numeric, rep.rate_analytic, rep.residual],
    )


def write_figure_csvs(log: TrajectoryLog, scenario: Scenario, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    m = log.cos_error.shape[1]
    paths = {}

    header, cols = ["t"], [log.t]
    for l in range(m):
        for a, name in enumerate(ANGLE_NAMES):
            header.append(f"{name}{l + 1}")
            cols.append(log.cos_error[:, l, a])
    paths["fig4"] = out_dir / "fig4_angle_errors.csv"
    _write_csv(paths["fig4"], header, cols)

    conv = analysis.convergence_report(log, scenario.maneuvers)
    a, b = scenario.maneuvers.leader
    z_err = log.q[:, a] - log.q[:, b] - scenario.maneuvers.z_star
    header = ["t", "z_err_x", "z_err_y", "z_err_norm"] + [f"v_err{lab}" for lab in log.labels]
    cols = [log.t, z_err[:, 0], z_err[:, 1], conv.leader_error] + list(conv.velocity_errors.T)
    paths["fig5"] = out_dir / "fig5_maneuver_errors.csv"
    _write_csv(paths["fig5"], header, cols)

    header, cols = ["t"], [log.t]
    for n, lab in enumerate(log.labels):
        header += [f"x{lab}", f"y{lab}"]
        cols += [log.q[:, n, 0], log.q[:, n, 1]]
    paths["fig6"] = out_dir / "fig6_trajectory.csv"
    _write_csv(paths["fig6"], header, cols)
    return paths
