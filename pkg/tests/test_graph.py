import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from angleform.errors import ConfigError, InvalidAttachment
from angleform.geometry import TriangleGeometry, as_six_rows, rotation, true_angle_jacobians
from angleform.graph import (
    DELTA_ANGLE,
    Triangle,
    assemble_global_jacobian,
    build_triangulated_laman,
    incidence_matrix,
    sigma_min,
    stacked_rank_matrix,
    triangle_geometries,
    triangle_jacobians,
    triangle_rank_audit,
)

from conftest import PAPER_Q, shape_positions


def paper_graph():
    return build_triangulated_laman((1, 2), [(3, 1, 2), (4, 2, 3)])


def cos_all(g, q):
    tri = triangle_geometries(g, q)
    return np.stack([tri.cos_theta, tri.cos_phi], axis=-1).ravel()


def test_single_triangle_counts():
    g = build_triangulated_laman((1, 2), [(3, 1, 2)])
    assert (g.node_count, g.edge_count, g.triangle_count) == (3, 3, 1)


def test_paper_graph_counts_and_roles():
    g = paper_graph()
    assert (g.node_count, g.edge_count, g.triangle_count) == (4, 5, 2)
    assert g.labels == (1, 2, 3, 4)
    assert [t.vertices for t in g.triangles] == [(0, 1, 2), (1, 2, 3)]
    g.with_angles([(1.0, 1.0), (1.0, 1.0)]).validate()


def test_triangle_edge_labels_follow_roles():
    g = paper_graph()
    for t in g.triangles:
        n1, n2, n3 = t.vertices
        i, j, k = t.edges
        assert set(g.edges[k]) == {n1, n2}
        assert set(g.edges[j]) == {n1, n3}
        assert set(g.edges[i]) == {n2, n3}


@pytest.mark.parametrize(
    "attachments",
    [[(4, 1, 4)], [(3, 1, 5)], [(3, 1, 2), (4, 1, 2), (5, 3, 4)], [(2, 1, 2)], [(3, 1, 1)]],
    ids=["self-anchor", "missing-anchor", "non-adjacent", "duplicate-node", "same-anchor"],
)
def test_invalid_attachments(attachments):
    with pytest.raises(InvalidAttachment):
        build_triangulated_laman((1, 2), attachments)


def test_seed_must_join_distinct_nodes():
    with pytest.raises(InvalidAttachment):
        build_triangulated_laman((1, 1), [])


@given(st.integers(1, 12), st.randoms(use_true_random=False))
def test_random_laman_graphs_satisfy_counts(n_new, rnd):
    attachments = []
    edges = [(0, 1)]
    for new in range(2, 2 + n_new):
        a, b = rnd.choice(edges)
        attachments.append((new, a, b))
        edges += [(a, new), (b, new)]
    g = build_triangulated_laman((0, 1), attachments)
    n = g.node_count
    assert g.edge_count == 2 * n - 3 and g.triangle_count == n - 2
    g.with_angles([(1.0, 1.0)] * g.triangle_count).validate()
    B = incidence_matrix(g)
    assert np.all((B == 1).sum(axis=0) == 1) and np.all((B == -1).sum(axis=0) == 1)


def test_incidence_single_edge():
    g = build_triangulated_laman((1, 2), [])
    np.testing.assert_array_equal(incidence_matrix(g), [[-1.0], [1.0]])


def test_incidence_columns_sum_to_zero():
    g = build_triangulated_laman((1, 2), [(3, 1, 2)])
    np.testing.assert_array_equal(incidence_matrix(g).sum(axis=0), 0.0)


def test_incidence_row_sums_are_in_minus_out_degree():
    g = paper_graph()
    B = incidence_matrix(g)
    assert B.shape == (4, 5)
    indeg = np.zeros(4)
    outdeg = np.zeros(4)
    for tail, head in g.edges:
        outdeg[tail] += 1
        indeg[head] += 1
    np.testing.assert_array_equal(B @ np.ones(5), indeg - outdeg)


def test_global_jacobian_single_triangle_embedding():
    g = build_triangulated_laman((1, 2), [(3, 1, 2)])
    q = PAPER_Q[:3]
    J = assemble_global_jacobian(g, q)
    rows = true_angle_jacobians(TriangleGeometry.from_positions(*q))
    np.testing.assert_array_equal(J, rows.reshape(2, 6))


def test_global_jacobian_sparsity():
    g = paper_graph()
    J = assemble_global_jacobian(g, PAPER_Q)
    assert J.shape == (4, 8)
    for l, t in enumerate(g.triangles):
        cols = sorted(2 * n + d for n in t.vertices for d in range(2))
        for row in J[2 * l : 2 * l + 2]:
            assert set(np.flatnonzero(row)) <= set(cols)


def test_global_jacobian_chain_rule():
    g = paper_graph()
    v = np.array([[0.3, -0.1], [0.2, 0.5], [-0.4, 0.1], [0.05, -0.3]])
    h = 1e-6
    fd = (cos_all(g, PAPER_Q + h * v) - cos_all(g, PAPER_Q - h * v)) / (2 * h)
    assert np.max(np.abs(assemble_global_jacobian(g, PAPER_Q) @ v.ravel() - fd)) < 1e-9
    # analytically computed rates via per-triangle rows
    jac = triangle_jacobians(g, PAPER_Q)
    rates = np.einsum("mard,mrd->ma", jac, v[g.triangle_vertices]).ravel()
    np.testing.assert_allclose(assemble_global_jacobian(g, PAPER_Q) @ v.ravel(), rates, atol=1e-10)


@given(arrays(float, (4, 2), elements=st.floats(-5, 5)), st.floats(-math.pi, math.pi))
def test_global_jacobian_annihilates_similarity_motions(q, angle):
    g = paper_graph()
    tri = [q[list(t.vertices)] for t in g.triangles]
    for p in tri:
        u, w = p[1] - p[0], p[2] - p[0]
        assume(abs(u[0] * w[1] - u[1] * w[0]) > 0.5)
        assume(min(np.linalg.norm(p[a] - p[b]) for a, b in ((0, 1), (0, 2), (1, 2))) > 0.5)
    J = assemble_global_jacobian(g, q)
    centered = q - q.mean(axis=0)
    fields = [
        np.tile([1.0, 0.0], 4),
        np.tile([0.0, 1.0], 4),
        (centered @ rotation(math.pi / 2).T).ravel(),
        centered.ravel(),
        np.tile(rotation(angle) @ [1.0, 0.0], 4),
    ]
    for f in fields:
        assert np.linalg.norm(J @ f) < 1e-10


def test_collinear_triangle_loses_rank():
    q = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 1e-9]])
    jac = true_angle_jacobians(TriangleGeometry.from_positions(*q))
    assert triangle_rank_audit(stacked_rank_matrix(jac)) < 1e-6


def test_desired_triangle_one_has_full_rank():
    q = shape_positions(math.pi / 2, math.pi / 4)
    jac = true_angle_jacobians(TriangleGeometry.from_positions(*q))
    sigma = triangle_rank_audit(stacked_rank_matrix(jac))
    assert sigma > 1e-3
    assert sigma == pytest.approx(sigma_min(jac))
    np.testing.assert_allclose(stacked_rank_matrix(jac), as_six_rows(jac).reshape(2, 6).T)


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_column_scaling_keeps_full_rank(a, b):
    q = shape_positions(math.pi / 2, math.pi / 4)
    m = stacked_rank_matrix(true_angle_jacobians(TriangleGeometry.from_positions(*q)))
    assert triangle_rank_audit(m * np.array([a, b])) > 0


@pytest.mark.parametrize(
    "theta, phi",
    [(DELTA_ANGLE / 2, 1.0), (1.0, math.pi - DELTA_ANGLE / 2), (1.5, 1.6), (0.0, 1.0)],
)
def test_angle_validation_rejects_near_degenerate(theta, phi):
    with pytest.raises(ConfigError):
        Triangle((0, 1, 2), (0, 1, 2), theta, phi).validate()


def test_with_roles_reassigns_edges():
    g = paper_graph().with_roles(1, [3, 1, 2])
    t = g.triangles[1]
    n1, n2, n3 = t.vertices
    assert set(g.edges[t.edges[2]]) == {n1, n2}
    with pytest.raises(ConfigError):
        paper_graph().with_roles(0, [0, 1, 3])


def test_role_scatter_and_triangles_of():
    g = paper_graph()
    assert g.triangles_of(1) == [(0, 1), (1, 0)]
    np.testing.assert_array_equal(g.role_scatter.sum(axis=1), [1, 2, 2, 1])
