"""Energy bookkeeping and numerical audits of the closed loop.

The storage function used throughout is

    H = sum_n |p_n|^2 / (2 m_n)
      + sum_l 1/2 (c_theta_l e_theta_l^2 + c_phi_l e_phi_l^2)
      + sum over estimators 1/2 c r_bar^2,

where ``c_theta_l`` is the spring gain shared by the three agents of triangle
``l`` for that angle. With maneuvers off its exact rate is

    dH/dt = - sum_n v_n^T D_n v_n - sum_{l, angle, n} d_n * rate * (L_n . v_n),

which reduces to ``-sum v^T D v - sum d * rate^2`` for a shared damper.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import AngleGains, evaluate_formation
from .errors import ConfigError
from .estimator import bank_derivative, edge_length_rates, term_flows
from .geometry import EDGE_J, EDGE_K, TERM_ANGLE, TERM_EDGE, TERM_ROLE, TriangleGeometry, true_angle_jacobians
from .graph import FormationGraph

RANK_THRESHOLD = 1e-3


def spring_weights(gains: AngleGains) -> np.ndarray:
    """Per-angle spring weight of the angle potential, (M, 2)."""
    return gains.spring.mean(axis=-1)


def springs_shared(gains: AngleGains) -> bool:
    c = gains.spring
    return bool(np.all(c == c[..., :1]))


def hamiltonian_terms(q, p, masses, error, r_hat, r_true_terms, gains: AngleGains, estimator_gain):
    """``(kinetic, angle potential, estimator potential)``; leading axes allowed."""
    p = np.asarray(p, dtype=float)
    masses = np.asarray(masses, dtype=float)
    kinetic = 0.5 * np.sum(np.sum(p * p, axis=-1) / masses, axis=-1)
    angle = 0.5 * np.sum(spring_weights(gains) * np.asarray(error) ** 2, axis=(-2, -1))
    r_bar = np.asarray(r_hat) - np.asarray(r_true_terms)
    estimator = 0.5 * np.sum(np.asarray(estimator_gain) * r_bar**2, axis=(-2, -1))
    return kinetic, angle, estimator


def total_hamiltonian(graph: FormationGraph, q, p, masses, r_hat, gains: AngleGains, estimator_gain) -> float:
    masses = np.asarray(masses, dtype=float)
    v = np.asarray(p, dtype=float) / masses[:, None]
    ft = evaluate_formation(graph, q, v, r_hat, gains)
    r_true = ft.geometry.r[..., TERM_EDGE]
    return sum(hamiltonian_terms(q, p, masses, ft.error, r_hat, r_true, gains, estimator_gain))


def analytic_hamiltonian_rate(v, friction, jac, rate, gains: AngleGains, graph: FormationGraph):
    """Closed-form dH/dt for the stabilization loop.

    ``v`` (N, 2) velocities, ``friction`` (N, 2, 2), ``jac`` the true rows
    (M, 2, 3, 2) and ``rate`` the cosine rates (M, 2); leading axes allowed.
    """
    v = np.asarray(v, dtype=float)
    dissipation = np.einsum("...ni,nij,...nj->...", v, np.asarray(friction), v)
    vt = v[..., graph.triangle_vertices, :]
    own = np.einsum("...mard,...mrd->...mar", jac, vt)
    damping = np.sum(gains.damper * np.asarray(rate)[..., None] * own, axis=(-3, -2, -1))
    return -dissipation - damping


def _relative(lhs, rhs, scale) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), scale)
    diff = np.abs(lhs - rhs)
    return np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)


@dataclass
class PowerBalance:
    """Residuals of the three power identities at one state."""

    agent_ports: float  # <L_hat^T gamma | v> vs sum of estimated-effort ports
    distance_ports: float  # beta * f vs c * r_bar * d r_bar/dt, per estimator
    total: float  # estimated power = true power + discrepancy power

    @property
    def worst(self) -> float:
        return max(self.agent_ports, self.distance_ports, self.total)


def power_balance(graph: FormationGraph, q, v, r_hat, gains: AngleGains, estimator_gain) -> PowerBalance:
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    r_hat = np.asarray(r_hat, dtype=float)
    c_est = np.broadcast_to(np.asarray(estimator_gain, dtype=float), r_hat.shape)
    ft = evaluate_formation(graph, q, v, r_hat, gains)
    tri = ft.geometry
    vt = v[graph.triangle_vertices]
    r_true = tri.r[:, TERM_EDGE]
    gamma = ft.term_efforts
    flow = term_flows(tri, vt)

    # Agent side: gamma * L_hat_an . v_n against sum of alpha * f over its terms.
    est_power = ft.effort * np.einsum("mard,mrd->mar", ft.jac_est, vt)
    alpha_f = (r_true / r_hat) * gamma * flow
    port_sum = np.zeros_like(est_power)
    np.add.at(port_sum, (slice(None), TERM_ANGLE, TERM_ROLE), alpha_f)
    abs_sum = np.zeros_like(est_power)
    np.add.at(abs_sum, (slice(None), TERM_ANGLE, TERM_ROLE), np.abs(alpha_f))
    agent = _relative(est_power, port_sum, abs_sum)

    # Distance side: beta * f must equal c * r_bar * d r_bar/dt.
    r_bar = r_hat - r_true
    beta = -(r_bar / r_hat) * gamma
    r_dot = edge_length_rates(tri, vt)[:, TERM_EDGE]
    r_hat_dot = bank_derivative(tri, vt, gamma, r_hat, c_est)
    lhs = c_est * r_bar * (r_hat_dot - r_dot)
    rhs = beta * flow
    # d r_bar/dt is a difference of two rates; rounding scales with their size.
    dist = _relative(lhs, rhs, c_est * np.abs(r_bar) * (np.abs(r_hat_dot) + np.abs(r_dot)))

    # Whole-network balance.
    true_power = ft.effort * np.einsum("mard,mrd->mar", ft.jac, vt)
    total_est = float(np.sum(est_power))
    total_rhs = float(np.sum(true_power)) + float(np.sum(beta * flow))
    scale = float(np.sum(np.abs(true_power)) + np.sum(np.abs(beta * flow)))
    total = float(_relative(np.array(total_est), np.array(total_rhs), scale))
    return PowerBalance(float(agent.max(initial=0.0)), float(dist.max(initial=0.0)), total)


def power_balance_audit(graph, q, v, r_hat, gains, estimator_gain) -> float:
    """Largest relative residual over all power identities at one state."""
    return power_balance(graph, q, v, r_hat, gains, estimator_gain).worst


def gradient_audit(n_triangles: int = 100, seed: int = 0, step: float = 1e-6) -> float:
    """Worst relative error of the true angle Jacobians against central
    differences of the cosines, over random non-degenerate triangles."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n_triangles:
        q = rng.uniform(-5, 5, size=(3, 2))
        tri = TriangleGeometry.from_positions(*q)
        if tri.r.min() < 0.5 or abs(_cross(tri.z[EDGE_K], tri.z[EDGE_J])) < 0.25:
            continue
        jac = true_angle_jacobians(tri)
        fd = np.zeros_like(jac)
        for role in range(3):
            for d in range(2):
                hi, lo = q.copy(), q.copy()
                hi[role, d] += step
                lo[role, d] -= step
                th = TriangleGeometry.from_positions(*hi)
                tl = TriangleGeometry.from_positions(*lo)
                fd[0, role, d] = (th.cos_theta - tl.cos_theta) / (2 * step)
                fd[1, role, d] = (th.cos_phi - tl.cos_phi) / (2 * step)
        err = np.max(np.abs(fd - jac)) / max(np.max(np.abs(jac)), 1e-12)
        worst = max(worst, float(err))
        done += 1
    return worst


def _cross(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def rank_audit(sigma, threshold: float = RANK_THRESHOLD) -> dict:
    """Per-triangle minimum over time of the smallest singular value.

    ``sigma`` is the logged (K, M) array.
    """
    sigma = np.asarray(sigma, dtype=float)
    minima = sigma.min(axis=0)
    argmin = sigma.argmin(axis=0)
    return {
        "minima": minima.tolist(),
        "argmin": argmin.tolist(),
        "flagged": [bool(m <= threshold) for m in minima],
        "passed": bool(np.all(minima > threshold)),
    }


def centered_rate(t, h) -> np.ndarray:
    """Centered finite difference of ``h`` at interior samples."""
    t = np.asarray(t)
    h = np.asarray(h)
    return (h[2:] - h[:-2]) / (t[2:] - t[:-2])


@dataclass
class EnergyReport:
    time: np.ndarray
    kinetic: np.ndarray
    angle: np.ndarray
    estimator: np.ndarray
    total: np.ndarray
    rate_numeric: np.ndarray  # NaN at the two endpoints
    rate_analytic: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return np.abs(self.rate_numeric - self.rate_analytic)

    def rate_check(self, tol: float = 1e-4):
        """Worst ``|num - analytic| / (1 + |analytic|)`` and its time."""
        scaled = (self.residual / (1.0 + np.abs(self.rate_analytic)))[1:-1]
        if scaled.size == 0:
            return 0.0, float(self.time[0])
        i = int(np.argmax(scaled))
        return float(scaled[i]), float(self.time[i + 1])

    def descent_check(self):
        """Worst ``(H[k+1] - H[k]) / (1 + H[k])`` and its time."""
        if self.total.size < 2:
            return -np.inf, float(self.time[0])
        inc = np.diff(self.total) / (1.0 + self.total[:-1])
        i = int(np.argmax(inc))
        return float(inc[i]), float(self.time[i + 1])

    def max_analytic(self) -> float:
        return float(self.rate_analytic.max())


def energy_report(log) -> EnergyReport:
    rate = np.full(log.t.shape, np.nan)
    if log.t.size >= 3:
        rate[1:-1] = centered_rate(log.t, log.energy_total)
    return EnergyReport(
        log.t,
        log.energy_kinetic,
        log.energy_angle,
        log.energy_estimator,
        log.energy_total,
        rate,
        log.rate_analytic,
    )


@dataclass
class ConvergenceReport:
    time: np.ndarray
    angle_errors: np.ndarray  # (K, M, 2) absolute cosine errors
    leader_error: np.ndarray  # (K,)
    velocity_errors: np.ndarray  # (K, N)

    @property
    def terminal(self) -> dict:
        return {
            "angle_errors": self.angle_errors[-1].ravel().tolist(),
            "leader_error": float(self.leader_error[-1]),
            "velocity_errors": self.velocity_errors[-1].tolist(),
        }


def convergence_report(log, maneuvers) -> ConvergenceReport:
    a, b = maneuvers.leader
    v = log.p / log.masses[None, :, None]
    z = log.q[:, a] - log.q[:, b]
    return ConvergenceReport(
        log.t,
        np.abs(log.cos_error),
        np.linalg.norm(z - maneuvers.z_star, axis=-1),
        np.linalg.norm(v - maneuvers.v_star, axis=-1),
    )


def require_shared_springs(gains: AngleGains) -> None:
    if not springs_shared(gains):
        raise ConfigError(
            "energy audit needs the three agents of each triangle to share the spring gain of each angle"
        )
