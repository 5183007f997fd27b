"""Port-Hamiltonian double-integrator agents and the fixed-step RK4 integrator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, NonFiniteState


class AgentState(NamedTuple):
    q: np.ndarray  # position
    p: np.ndarray  # momentum


@dataclass(frozen=True)
class AgentParams:
    mass: float = 1.0
    friction: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        d = np.asarray(self.friction, dtype=float)
        if d.shape == ():
            d = d * np.eye(2)
        if d.shape != (2, 2):
            raise ConfigError(f"friction must be a scalar or 2x2 matrix, got shape {d.shape}")
        if not self.mass > 0:
            raise ConfigError(f"mass must be positive, got {self.mass}")
        if not np.allclose(d, d.T) or np.linalg.eigvalsh(d).min() < -1e-12:
            raise ConfigError("friction matrix must be symmetric positive semidefinite")
        object.__setattr__(self, "friction", d)


def agent_derivative(state: AgentState, params: AgentParams, u) -> tuple[np.ndarray, np.ndarray]:
    """``(dq/dt, dp/dt) = (p/m, -D p/m + u)``; the output ``Y`` is ``dq/dt``."""
    v = np.asarray(state.p, dtype=float) / params.mass
    return v, -params.friction @ v + np.asarray(u, dtype=float)


@dataclass
class SystemState:
    """Joint integration state: positions and momenta (N, 2), estimates (M, 8)."""

    q: np.ndarray
    p: np.ndarray
    r_hat: np.ndarray

    @property
    def agents(self) -> list[AgentState]:
        return [AgentState(q, p) for q, p in zip(self.q, self.p)]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q.ravel(), self.p.ravel(), self.r_hat.ravel()])

    @classmethod
    def from_vector(cls, x: np.ndarray, n_agents: int, n_triangles: int) -> "SystemState":
        a = 2 * n_agents
        return cls(
            x[:a].reshape(n_agents, 2),
            x[a : 2 * a].reshape(n_agents, 2),
            x[2 * a :].reshape(n_triangles, -1),
        )


def rk4_step(derivative: Callable, state, dt: float):
    """One classical Runge-Kutta step of ``dx/dt = derivative(x)``.

    ``state`` may be a float or any numpy array.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    k1 = derivative(state)
    k2 = derivative(state + 0.5 * dt * k1)
    k3 = derivative(state + 0.5 * dt * k2)
    k4 = derivative(state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("state became non-finite")
    return out
