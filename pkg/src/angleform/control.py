"""Virtual spring-damper couplings in angle space and the maneuver controllers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import AgentParams
from .errors import ConfigError
from .geometry import TERM_ANGLE, TERM_ROLE, TriangleGeometry, estimated_angle_jacobians, true_angle_jacobians
from .graph import FormationGraph, triangle_geometries


@dataclass(frozen=True)
class AngleGains:
    """Spring and damper gains indexed ``[triangle, angle, role-1]``."""

    spring: np.ndarray
    damper: np.ndarray

    def __post_init__(self):
        c = np.array(self.spring, dtype=float)
        d = np.array(self.damper, dtype=float)
        if c.ndim != 3 or c.shape[1:] != (2, 3) or d.shape != c.shape:
            raise ConfigError(f"angle gains must have shape (M, 2, 3), got {c.shape} and {d.shape}")
        if np.any(c <= 0) or np.any(d < 0):
            raise ConfigError("angle springs must be positive and dampers nonnegative")
        object.__setattr__(self, "spring", c)
        object.__setattr__(self, "damper", d)

    @classmethod
    def uniform(cls, triangle_count: int, spring: float = 10.0, damper: float = 1.0) -> "AngleGains":
        shape = (triangle_count, 2, 3)
        return cls(np.full(shape, float(spring)), np.full(shape, float(damper)))


def _psd(name, m, shape=(2, 2)):
    m = np.asarray(m, dtype=float)
    if m.shape == ():
        m = m * np.eye(2)
    elif m.shape == (2,):
        m = np.diag(m)
    if m.shape[-2:] != shape:
        raise ConfigError(f"{name} must be 2x2, got shape {m.shape}")
    if not np.allclose(m, np.swapaxes(m, -1, -2)) or np.linalg.eigvalsh(m).min() < -1e-12:
        raise ConfigError(f"{name} must be symmetric positive semidefinite")
    return m


@dataclass(frozen=True)
class ManeuverConfig:
    """Leader-edge displacement servo and common-velocity tracking settings.

    ``leader`` holds node indices (a, b); the servoed displacement is
    ``q_a - q_b``.
    """

    leader: tuple[int, int] = (0, 1)
    z_star: np.ndarray = field(default_factory=lambda: np.zeros(2))
    damping_z: np.ndarray = field(default_factory=lambda: np.eye(2))
    v_star: np.ndarray = field(default_factory=lambda: np.zeros(2))
    damping_v: np.ndarray = field(default_factory=lambda: np.eye(2))
    scale_orientation: bool = False
    velocity_tracking: bool = False

    def __post_init__(self):
        a, b = self.leader
        if a == b:
            raise ConfigError("leader agents must be distinct")
        object.__setattr__(self, "leader", (int(a), int(b)))
        object.__setattr__(self, "z_star", np.asarray(self.z_star, dtype=float).reshape(2))
        object.__setattr__(self, "v_star", np.asarray(self.v_star, dtype=float).reshape(2))
        object.__setattr__(self, "damping_z", _psd("D_z", self.damping_z))
        object.__setattr__(self, "damping_v", _psd("D_v", self.damping_v))

    @property
    def any_enabled(self) -> bool:
        return self.scale_orientation or self.velocity_tracking

    def damping_v_of(self, n: int) -> np.ndarray:
        return self.damping_v if self.damping_v.ndim == 2 else self.damping_v[n]


def coupling_effort(err, err_rate, c, d):
    """Spring plus damper force ``c*err + d*err_rate`` of one virtual coupling."""
    return c * err + d * err_rate


def angle_errors_and_rates(tri: TriangleGeometry, velocities, theta_star, phi_star):
    """Cosine errors and their rates, ``(e_theta, e_phi, de_theta, de_phi)``.

    ``velocities`` holds the three vertex velocities by role, shape (..., 3, 2).
    """
    v = np.asarray(velocities, dtype=float)
    jac = true_angle_jacobians(tri)
    rates = np.einsum("...ard,...rd->...a", jac, v)
    e_theta = tri.cos_theta - np.cos(theta_star)
    e_phi = tri.cos_phi - np.cos(phi_star)
    return e_theta, e_phi, rates[..., 0], rates[..., 1]


@dataclass
class FormationTerms:
    """Everything the formation law computes for one state, per triangle."""

    geometry: TriangleGeometry
    jac: np.ndarray  # true rows (M, 2, 3, 2)
    jac_est: np.ndarray  # estimated rows (M, 2, 3, 2)
    error: np.ndarray  # (M, 2) cosine errors
    rate: np.ndarray  # (M, 2) cosine rates
    effort: np.ndarray  # (M, 2, 3) coupling efforts gamma[angle, role]
    forces: np.ndarray  # (N, 2)

    @property
    def term_efforts(self) -> np.ndarray:
        """Effort of the owning (agent, angle) for every estimator term, (M, 8)."""
        return self.effort[..., TERM_ANGLE, TERM_ROLE]


def desired_cosines(graph: FormationGraph) -> np.ndarray:
    return np.cos([[t.theta_star, t.phi_star] for t in graph.triangles]).reshape(-1, 2)


def evaluate_formation(graph: FormationGraph, q, v, r_hat, gains: AngleGains) -> FormationTerms:
    """Evaluate the formation law; all state arrays may carry leading axes."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    tv = graph.triangle_vertices
    tri = triangle_geometries(graph, q)
    vt = v[..., tv, :]
    jac = true_angle_jacobians(tri)
    jac_est = estimated_angle_jacobians(tri.s, r_hat)
    error = np.stack([tri.cos_theta, tri.cos_phi], axis=-1) - desired_cosines(graph)
    rate = np.einsum("...mard,...mrd->...ma", jac, vt)
    effort = coupling_effort(error[..., None], rate[..., None], gains.spring, gains.damper)
    per_role = -np.einsum("...mard,...mar->...mrd", jac_est, effort)
    forces = np.einsum("nk,...kd->...nd", graph.role_scatter, per_role.reshape(per_role.shape[:-3] + (-1, 2)))
    return FormationTerms(tri, jac, jac_est, error, rate, effort, forces)


def formation_force(n: int, graph: FormationGraph, q, v, r_hat, gains: AngleGains) -> np.ndarray:
    """Force on agent ``n``: minus the estimated-Jacobian-transposed efforts,
    summed over every triangle containing ``n``."""
    return evaluate_formation(graph, q, v, r_hat, gains).forces[n]


def scale_orientation_force(q, v, cfg: ManeuverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Equal and opposite leader forces driving ``q_a - q_b`` to ``z_star``."""
    a, b = cfg.leader
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    z = q[..., a, :] - q[..., b, :]
    zdot = v[..., a, :] - v[..., b, :]
    u_a = -(z - cfg.z_star) - zdot @ cfg.damping_z.T
    return u_a, -u_a


def velocity_tracking_force(v, params: AgentParams, cfg: ManeuverConfig, n: int = 0) -> np.ndarray:
    """Friction feed-forward plus damping toward the common velocity ``v_star``."""
    v = np.asarray(v, dtype=float)
    return params.friction @ cfg.v_star - cfg.damping_v_of(n) @ (v - cfg.v_star)


def maneuver_forces(q, v, friction, cfg: ManeuverConfig) -> np.ndarray:
    """Maneuver inputs of all agents, (..., N, 2); ``friction`` is (N, 2, 2)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.zeros(np.broadcast_shapes(q.shape, v.shape))
    if cfg.scale_orientation:
        u_a, u_b = scale_orientation_force(q, v, cfg)
        a, b = cfg.leader
        out[..., a, :] += u_a
        out[..., b, :] += u_b
    if cfg.velocity_tracking:
        friction = np.asarray(friction, dtype=float)
        dv = np.broadcast_to(cfg.damping_v, friction.shape)
        out += friction @ cfg.v_star - np.einsum("nij,...nj->...ni", dv, v - cfg.v_star)
    return out


def total_input(graph: FormationGraph, q, v, r_hat, gains: AngleGains, params: list[AgentParams], cfg: ManeuverConfig) -> np.ndarray:
    """Superposition of the formation law and every enabled maneuver, (N, 2)."""
    friction = np.stack([pn.friction for pn in params])
    return evaluate_formation(graph, q, v, r_hat, gains).forces + maneuver_forces(q, v, friction, cfg)
