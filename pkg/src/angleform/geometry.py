"""Planar vector algebra, bearings and the angle constraint Jacobians.

Vectors are plain numpy arrays whose last axis has length 2. Every function
broadcasts over leading axes, so a stack of ``M`` triangles is handled by
passing arrays of shape ``(M, 2)``.

Triangle convention (roles 1, 2, 3 are the vertices ``q1, q2, q3``)::

    z_k = q2 - q1      z_j = q3 - q1      z_i = q3 - q2
    cos(theta) = s_k . s_j    (interior angle at vertex 1)
    cos(phi)   = s_i . s_j    (interior angle at vertex 3)

Each angle Jacobian row is a signed sum of "edge terms" ``P_e s_x / r_e`` with
``P_e = I - s_e s_e^T``. The eight (role, angle, edge) terms are listed in
:data:`TERMS`; replacing ``r_e`` by a per-term estimate gives the estimated
Jacobians used by the controllers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CoincidentAgents, EstimatorSingular

EPS_COINCIDE = 1e-9
EPS_ESTIMATE = 1e-6

THETA, PHI = 0, 1
ANGLE_NAMES = ("theta", "phi")
EDGE_I, EDGE_J, EDGE_K = 0, 1, 2
EDGE_NAMES = ("i", "j", "k")


class Term(NamedTuple):
    role: int  # 1, 2 or 3
    angle: int  # THETA or PHI
    edge: int  # EDGE_I, EDGE_J or EDGE_K
    bearing: int  # edge whose bearing is projected
    sign: float


# One entry per (agent role, angle, edge) pair that appears in the angle
# Jacobians. The term vector is sign * P_edge s_bearing / r_edge.
TERMS: tuple[Term, ...] = (
    Term(1, THETA, EDGE_K, EDGE_J, -1.0),
    Term(1, THETA, EDGE_J, EDGE_K, -1.0),
    Term(1, PHI, EDGE_J, EDGE_I, -1.0),
    Term(2, THETA, EDGE_K, EDGE_J, 1.0),
    Term(2, PHI, EDGE_I, EDGE_J, -1.0),
    Term(3, PHI, EDGE_I, EDGE_J, 1.0),
    Term(3, PHI, EDGE_J, EDGE_I, 1.0),
    Term(3, THETA, EDGE_J, EDGE_K, 1.0),
)
N_TERMS = len(TERMS)
TERM_ROLE = np.array([t.role - 1 for t in TERMS])
TERM_ANGLE = np.array([t.angle for t in TERMS])
TERM_EDGE = np.array([t.edge for t in TERMS])
TERM_BEARING = np.array([t.bearing for t in TERMS])
TERM_SIGN = np.array([t.sign for t in TERMS])

# Sums term vectors into Jacobian rows laid out as (angle, role).
_TERM_TO_ROW = np.zeros((2, 3, N_TERMS))
for _n, _t in enumerate(TERMS):
    _TERM_TO_ROW[_t.angle, _t.role - 1, _n] = 1.0


def term_label(triangle: int, slot: int) -> str:
    t = TERMS[slot]
    return f"T{triangle + 1}_a{t.role}_{ANGLE_NAMES[t.angle]}_{EDGE_NAMES[t.edge]}"


def check_estimates(estimates) -> None:
    """Raise EstimatorSingular naming the smallest estimate if any is <= EPS_ESTIMATE.

    ``estimates`` is (..., 8) or (..., M, 8) in :data:`TERMS` order.
    """
    estimates = np.asarray(estimates, dtype=float)
    bad = ~(estimates > EPS_ESTIMATE)
    if not np.any(bad):
        return
    # argmin returns the first NaN if there is one, which is also offending.
    idx = np.unravel_index(int(np.argmin(np.where(bad, estimates, np.inf))), estimates.shape)
    triangle = idx[-2] if estimates.ndim >= 2 else 0
    raise EstimatorSingular(f"estimate {term_label(triangle, idx[-1])} = {estimates[idx]:.6g} <= {EPS_ESTIMATE}")


def relative_position(q_tail, q_head) -> np.ndarray:
    return np.asarray(q_head, dtype=float) - np.asarray(q_tail, dtype=float)


def distance_and_bearing(z) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(|z|, z/|z|)``.

    Raises CoincidentAgents when any ``|z| <= EPS_COINCIDE``.
    """
    z = np.asarray(z, dtype=float)
    r = np.hypot(z[..., 0], z[..., 1])
    if np.any(r <= EPS_COINCIDE):
        raise CoincidentAgents(f"relative position {z.tolist()} below {EPS_COINCIDE}")
    return r, z / r[..., None]


def projector(s) -> np.ndarray:
    """``I - s s^T`` for unit vectors ``s`` of shape (..., 2)."""
    s = np.asarray(s, dtype=float)
    return np.eye(2) - s[..., :, None] * s[..., None, :]


def bearing_jacobian(z) -> np.ndarray:
    r, s = distance_and_bearing(z)
    return projector(s) / r[..., None, None]


def distance_jacobian(z) -> np.ndarray:
    return distance_and_bearing(z)[1]


def cos_angle(s_a, s_b) -> np.ndarray | float:
    c = np.sum(np.asarray(s_a, dtype=float) * np.asarray(s_b, dtype=float), axis=-1)
    return np.clip(c, -1.0, 1.0)


@dataclass(frozen=True)
class TriangleGeometry:
    """Edge vectors, lengths and bearings of one (or a stack of) triangles."""

    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    z: np.ndarray  # (..., 3, 2) ordered (i, j, k)
    r: np.ndarray  # (..., 3)
    s: np.ndarray  # (..., 3, 2)

    @classmethod
    def from_positions(cls, q1, q2, q3) -> "TriangleGeometry":
        q1, q2, q3 = (np.asarray(q, dtype=float) for q in (q1, q2, q3))
        z = np.stack(
            [relative_position(q2, q3), relative_position(q1, q3), relative_position(q1, q2)],
            axis=-2,
        )
        r, s = distance_and_bearing(z)
        return cls(q1, q2, q3, z, r, s)

    @property
    def s_i(self):
        return self.s[..., EDGE_I, :]

    @property
    def s_j(self):
        return self.s[..., EDGE_J, :]

    @property
    def s_k(self):
        return self.s[..., EDGE_K, :]

    @property
    def cos_theta(self):
        return cos_angle(self.s_k, self.s_j)

    @property
    def cos_phi(self):
        return cos_angle(self.s_i, self.s_j)

    def edge_rates(self, v1, v2, v3) -> np.ndarray:
        """Relative velocities of edges (i, j, k), shape (..., 3, 2)."""
        v1, v2, v3 = (np.asarray(v, dtype=float) for v in (v1, v2, v3))
        return np.stack([v3 - v2, v3 - v1, v2 - v1], axis=-2)


def term_vectors(bearings) -> np.ndarray:
    """Signed projected bearings ``sign * P_e s_x`` for the eight terms.

    ``bearings`` has shape (..., 3, 2) ordered (i, j, k). Result (..., 8, 2).
    Only bearing information enters here.
    """
    s = np.asarray(bearings, dtype=float)
    s_e = s[..., TERM_EDGE, :]
    s_x = s[..., TERM_BEARING, :]
    proj = s_x - np.sum(s_e * s_x, axis=-1, keepdims=True) * s_e
    return TERM_SIGN[:, None] * proj


def rows_from_terms(contributions) -> np.ndarray:
    """Sum (..., 8, 2) term contributions into rows of shape (..., 2, 3, 2).

    Row ``[angle, role-1]``; reshaping to (..., 6, 2) gives the order
    theta1, theta2, theta3, phi1, phi2, phi3.
    """
    return np.einsum("arn,...nd->...ard", _TERM_TO_ROW, contributions)


def true_angle_jacobians(tri: TriangleGeometry) -> np.ndarray:
    lengths = tri.r[..., TERM_EDGE]
    return rows_from_terms(term_vectors(tri.s) / lengths[..., None])


def estimated_angle_jacobians(bearings, estimates) -> np.ndarray:
    """Angle Jacobians with every ``1/r_e`` replaced by the term's own ``1/r_hat``.

    ``estimates`` has shape (..., 8) in :data:`TERMS` order.
    """
    estimates = np.asarray(estimates, dtype=float)
    check_estimates(estimates)
    return rows_from_terms(term_vectors(bearings) / estimates[..., None])


def as_six_rows(jac) -> np.ndarray:
    """Reshape (..., 2, 3, 2) rows to (..., 6, 2)."""
    jac = np.asarray(jac)
    return jac.reshape(jac.shape[:-3] + (6, 2))


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])
