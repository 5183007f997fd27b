"""Triangulated Laman graphs, incidence matrices and the stacked angle Jacobian."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidAttachment
from .geometry import TriangleGeometry, estimated_angle_jacobians, true_angle_jacobians

DELTA_ANGLE = 0.1


@dataclass(frozen=True)
class Triangle:
    """One triangle of the graph.

    ``vertices`` are node indices playing roles 1, 2, 3; ``edges`` are edge ids
    (i, j, k) with k = n1-n2, j = n1-n3, i = n2-n3. ``theta_star`` is the
    desired interior angle at n1, ``phi_star`` the one at n3 (radians).
    """

    vertices: tuple[int, int, int]
    edges: tuple[int, int, int]
    theta_star: float = math.pi / 3
    phi_star: float = math.pi / 3

    def validate(self, delta: float = DELTA_ANGLE) -> None:
        for name, a in (("theta", self.theta_star), ("phi", self.phi_star)):
            if not delta < a < math.pi - delta:
                raise ConfigError(
                    f"desired {name}={a:.6g} rad outside ({delta}, pi - {delta})"
                )
        third = math.pi - self.theta_star - self.phi_star
        if not delta < third:
            raise ConfigError(
                f"desired angles {self.theta_star:.6g}, {self.phi_star:.6g} leave "
                f"third angle {third:.6g} rad <= {delta}"
            )


@dataclass(frozen=True)
class FormationGraph:
    """Nodes are indices 0..N-1; ``labels`` keeps the user-facing node names."""

    labels: tuple
    edges: tuple[tuple[int, int], ...]
    triangles: tuple[Triangle, ...]
    _edge_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for e, (a, b) in enumerate(self.edges):
            index[frozenset((a, b))] = e
        object.__setattr__(self, "_edge_index", index)

    @property
    def node_count(self) -> int:
        return len(self.labels)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def edge_between(self, a: int, b: int) -> int | None:
        return self._edge_index.get(frozenset((a, b)))

    def index_of(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"unknown node {label!r}") from None

    @property
    def triangle_vertices(self) -> np.ndarray:
        """(M, 3) array of node indices by role."""
        return np.array([t.vertices for t in self.triangles], dtype=int).reshape(-1, 3)

    @property
    def role_scatter(self) -> np.ndarray:
        """(N, 3M) 0/1 matrix summing per-(triangle, role) vectors onto nodes."""
        tv = self.triangle_vertices.ravel()
        out = np.zeros((self.node_count, tv.size))
        out[tv, np.arange(tv.size)] = 1.0
        return out

    def triangles_of(self, n: int) -> list[tuple[int, int]]:
        """(triangle id, role index 0..2) pairs for every triangle containing ``n``."""
        return [(l, t.vertices.index(n)) for l, t in enumerate(self.triangles) if n in t.vertices]

    def with_angles(self, angles) -> "FormationGraph":
        tris = tuple(
            Triangle(t.vertices, t.edges, float(th), float(ph))
            for t, (th, ph) in zip(self.triangles, angles, strict=True)
        )
        return FormationGraph(self.labels, self.edges, tris)

    def with_roles(self, l: int, vertices) -> "FormationGraph":
        """Reassign which nodes of triangle ``l`` play roles 1, 2, 3."""
        old = self.triangles[l]
        vertices = tuple(int(v) for v in vertices)
        if sorted(vertices) != sorted(old.vertices):
            raise ConfigError(f"triangle {l} has nodes {old.vertices}, got roles {vertices}")
        n1, n2, n3 = vertices
        edges = (self.edge_between(n2, n3), self.edge_between(n1, n3), self.edge_between(n1, n2))
        tris = list(self.triangles)
        tris[l] = Triangle(vertices, edges, old.theta_star, old.phi_star)
        return FormationGraph(self.labels, self.edges, tuple(tris))

    def validate(self, delta: float = DELTA_ANGLE) -> None:
        n = self.node_count
        if n < 3:
            raise ConfigError(f"need at least 3 nodes, got {n}")
        if self.edge_count != 2 * n - 3:
            raise ConfigError(f"Laman count violated: E={self.edge_count}, 2N-3={2 * n - 3}")
        if self.triangle_count != n - 2:
            raise ConfigError(f"expected {n - 2} triangles, got {self.triangle_count}")
        for t in self.triangles:
            n1, n2, n3 = t.vertices
            expected = (self.edge_between(n2, n3), self.edge_between(n1, n3), self.edge_between(n1, n2))
            if None in expected or tuple(expected) != tuple(t.edges):
                raise ConfigError(f"triangle {t.vertices} edges {t.edges} do not match graph")
            t.validate(delta)


def build_triangulated_laman(seed, attachments) -> FormationGraph:
    """Grow a graph from the edge ``seed`` by attaching new nodes to adjacent pairs.

    Each attachment ``(new, a, b)`` adds edges a->new and b->new and the
    triangle (a, b, new) with roles 1, 2, 3.
    """
    a0, b0 = seed
    if a0 == b0:
        raise InvalidAttachment(f"seed edge joins {a0!r} to itself")
    labels = [a0, b0]
    edges = [(0, 1)]
    adjacency = {frozenset((0, 1))}
    triangles = []
    for new, a, b in attachments:
        if new in labels:
            raise InvalidAttachment(f"node {new!r} already present")
        if a not in labels or b not in labels:
            raise InvalidAttachment(f"attachment ({new!r}, {a!r}, {b!r}) references a missing anchor")
        ia, ib = labels.index(a), labels.index(b)
        if ia == ib or frozenset((ia, ib)) not in adjacency:
            raise InvalidAttachment(f"anchors {a!r}, {b!r} of node {new!r} are not adjacent")
        labels.append(new)
        n = len(labels) - 1
        k = [e for e, pair in enumerate(edges) if set(pair) == {ia, ib}][0]
        edges.append((ia, n))
        j = len(edges) - 1
        edges.append((ib, n))
        i = len(edges) - 1
        adjacency.update({frozenset((ia, n)), frozenset((ib, n))})
        triangles.append(Triangle((ia, ib, n), (i, j, k)))
    return FormationGraph(tuple(labels), tuple(edges), tuple(triangles))


def incidence_matrix(g: FormationGraph) -> np.ndarray:
    """N x E matrix: +1 at the head of each edge, -1 at its tail."""
    b = np.zeros((g.node_count, g.edge_count))
    for e, (tail, head) in enumerate(g.edges):
        b[tail, e] = -1.0
        b[head, e] = 1.0
    return b


def triangle_geometries(g: FormationGraph, positions) -> TriangleGeometry:
    """Stacked geometry of all triangles, leading axis M."""
    q = np.asarray(positions, dtype=float)
    tv = g.triangle_vertices
    return TriangleGeometry.from_positions(q[..., tv[:, 0], :], q[..., tv[:, 1], :], q[..., tv[:, 2], :])


def triangle_jacobians(g: FormationGraph, positions, estimates=None) -> np.ndarray:
    """Per-triangle Jacobian rows, shape (M, 2, 3, 2).

    With ``estimates`` (M, 8) the estimated Jacobians are returned, otherwise
    the true ones.
    """
    tri = triangle_geometries(g, positions)
    if estimates is None:
        return true_angle_jacobians(tri)
    return estimated_angle_jacobians(tri.s, estimates)


def assemble_global_jacobian(g: FormationGraph, positions, estimates=None) -> np.ndarray:
    """Stack every triangle's (theta_l, phi_l) rows into a 2M x 2N matrix."""
    jac = triangle_jacobians(g, positions, estimates)
    out = np.zeros((2 * g.triangle_count, 2 * g.node_count))
    for l, t in enumerate(g.triangles):
        for role, n in enumerate(t.vertices):
            out[2 * l : 2 * l + 2, 2 * n : 2 * n + 2] += jac[l, :, role, :]
    return out


def stacked_rank_matrix(jac) -> np.ndarray:
    """The 6x2 matrix whose columns are the theta and phi rows of one triangle."""
    jac = np.asarray(jac)
    return jac.reshape(jac.shape[:-3] + (2, 6)).swapaxes(-1, -2)


def triangle_rank_audit(matrix) -> float:
    """Smallest singular value of a 6x2 per-triangle Jacobian matrix."""
    return float(np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)[-1])


def sigma_min(jac) -> np.ndarray:
    """Vectorised smallest singular values for rows of shape (..., 2, 3, 2)."""
    return np.linalg.svd(stacked_rank_matrix(jac), compute_uv=False)[..., -1]
