"""Distance estimators driven by bearings, relative velocities and coupling efforts.

Every (agent role, angle, edge) term of a triangle's angle Jacobians carries its
own estimate ``r_hat`` of the edge length, eight per triangle. An estimate
evolves as

    d r_hat / dt = s_e . dz_e/dt - gamma * f / (c * r_hat)

where ``gamma`` is the owning agent's coupling effort for that angle and
``f = (sign * P_e s_x / r_e) . v_n`` is the true-Jacobian flow contributed by
the owning agent through edge ``e``. The second term is chosen so that the
distance-space port ``c * r_bar * d r_bar/dt`` carries exactly the power lost
by using ``r_hat`` instead of ``r`` in the Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, EstimatorSingular
from .geometry import (
    ANGLE_NAMES,
    EDGE_NAMES,
    EPS_ESTIMATE,
    TERM_EDGE,
    TERM_ROLE,
    TERMS,
    TriangleGeometry,
    check_estimates,
    term_vectors,
)


class EstimatorKey(NamedTuple):
    triangle: int
    role: int  # 1, 2, 3
    angle: str  # "theta" | "phi"
    edge: str  # "i" | "j" | "k"

    @property
    def slot(self) -> int:
        try:
            return _SLOT[(self.role, self.angle, self.edge)]
        except KeyError:
            raise KeyError(f"no estimator for role {self.role}, {self.angle}, edge {self.edge}") from None

    @property
    def label(self) -> str:
        return f"T{self.triangle + 1}_a{self.role}_{self.angle}_{self.edge}"


_SLOT = {(t.role, ANGLE_NAMES[t.angle], EDGE_NAMES[t.edge]): n for n, t in enumerate(TERMS)}
SLOT_KEYS = tuple((t.role, ANGLE_NAMES[t.angle], EDGE_NAMES[t.edge]) for t in TERMS)


class EstimatorState(NamedTuple):
    r_hat: float
    gain: float


@dataclass(frozen=True)
class EstimatorBank:
    """All estimates of a graph: ``r_hat`` and ``gain`` are (M, 8) arrays."""

    r_hat: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        r_hat = np.array(self.r_hat, dtype=float).reshape(-1, len(TERMS))
        gain = np.broadcast_to(np.asarray(self.gain, dtype=float), r_hat.shape).copy()
        if np.any(gain <= 0):
            raise ConfigError("estimator gains must be positive")
        object.__setattr__(self, "r_hat", r_hat)
        object.__setattr__(self, "gain", gain)

    def __len__(self) -> int:
        return self.r_hat.size

    def __getitem__(self, key: EstimatorKey) -> EstimatorState:
        return EstimatorState(float(self.r_hat[key.triangle, key.slot]), float(self.gain[key.triangle, key.slot]))

    def keys(self) -> list[EstimatorKey]:
        return [EstimatorKey(l, *k) for l in range(self.r_hat.shape[0]) for k in SLOT_KEYS]

    def with_estimates(self, r_hat) -> "EstimatorBank":
        return EstimatorBank(r_hat, self.gain)


def init_bank(triangle_count: int, initial=1.0, gain=10.0, geometry: TriangleGeometry | None = None) -> EstimatorBank:
    """Build a complete bank.

    ``initial`` is a positive number, an (M, 8) array, or ``"true"`` to start
    every estimate at the actual edge length (needs ``geometry``).
    """
    shape = (triangle_count, len(TERMS))
    if isinstance(initial, str):
        if initial != "true":
            raise ConfigError(f"estimator initial value must be a number or 'true', got {initial!r}")
        if geometry is None:
            raise ConfigError("initial='true' needs the triangle geometry")
        r_hat = np.asarray(geometry.r)[..., TERM_EDGE].reshape(shape)
    else:
        r_hat = np.broadcast_to(np.asarray(initial, dtype=float), shape).copy()
    if np.any(~np.isfinite(r_hat)) or np.any(r_hat <= EPS_ESTIMATE):
        raise ConfigError(f"initial distance estimates must exceed {EPS_ESTIMATE}")
    return EstimatorBank(r_hat, gain)


def term_flows(tri: TriangleGeometry, velocities) -> np.ndarray:
    """Flow ``f`` of every term, (..., 8). ``velocities`` is (..., 3, 2) by role."""
    v = np.asarray(velocities, dtype=float)
    vt = v[..., TERM_ROLE, :]
    contrib = term_vectors(tri.s) / tri.r[..., TERM_EDGE, None]
    return np.sum(contrib * vt, axis=-1)


def edge_length_rates(tri: TriangleGeometry, velocities) -> np.ndarray:
    """``dr_e/dt = s_e . dz_e/dt`` for edges (i, j, k), shape (..., 3)."""
    v = np.asarray(velocities, dtype=float)
    zdot = tri.edge_rates(v[..., 0, :], v[..., 1, :], v[..., 2, :])
    return np.sum(tri.s * zdot, axis=-1)


def bank_derivative(tri: TriangleGeometry, velocities, term_efforts, r_hat, gain) -> np.ndarray:
    """Time derivative of every estimate; all term arrays are (..., 8)."""
    r_hat = np.asarray(r_hat, dtype=float)
    check_estimates(r_hat)
    rdot = edge_length_rates(tri, velocities)[..., TERM_EDGE]
    return rdot - term_efforts * term_flows(tri, velocities) / (gain * r_hat)


def estimator_derivative(key: EstimatorKey, bank: EstimatorBank, tri: TriangleGeometry, velocities, gamma: float) -> float:
    """Derivative of the single estimate ``key``.

    ``tri`` is the geometry of ``key.triangle`` alone, ``velocities`` the
    three vertex velocities by role, ``gamma`` the owning agent's effort.
    """
    r_hat, c = bank[key]
    if r_hat <= EPS_ESTIMATE:
        raise EstimatorSingular(f"{key.label}: estimate {r_hat:.3g} <= {EPS_ESTIMATE}")
    n = key.slot
    f = term_flows(tri, velocities)[n]
    rdot = edge_length_rates(tri, velocities)[TERM_EDGE[n]]
    return float(rdot - gamma * f / (c * r_hat))
