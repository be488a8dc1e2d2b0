from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from folearn.errors import DegenerateElementError, InvalidMaterialError
from folearn.fem import (GAUSS_2X2, StiffnessOperator, b_matrix, constitutive_3d, constitutive_plane_stress,
                         element_stiffness, jacobian, shape_functions_quad4)
from folearn.mesh import Mesh, build_structured_grid, build_structured_tet_mesh


def top99_element(nu):
    """Closed-form unit-E square plane-stress quad4 stiffness (2x2 Gauss)."""
    k = [1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
         -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8]
    idx = [[0, 1, 2, 3, 4, 5, 6, 7], [1, 0, 7, 6, 5, 4, 3, 2], [2, 7, 0, 5, 6, 3, 4, 1],
           [3, 6, 5, 0, 7, 2, 1, 4], [4, 5, 6, 7, 0, 1, 2, 3], [5, 4, 3, 2, 1, 0, 7, 6],
           [6, 3, 4, 1, 2, 7, 0, 5], [7, 2, 1, 4, 3, 6, 5, 0]]
    return np.array([[k[j] for j in row] for row in idx]) / (1 - nu * nu)


def dense_K(mesh, E, nu):
    K = np.zeros((mesh.n_dofs, mesh.n_dofs))
    dofs = mesh.element_dofs()
    for e in range(mesh.n_elements):
        K[np.ix_(dofs[e], dofs[e])] += element_stiffness(mesh, e, E[mesh.elements[e]], nu)
    return K


def test_shape_functions_at_node_and_centre():
    N, dN = shape_functions_quad4((-1, -1))
    assert N.tolist() == [1, 0, 0, 0]
    N, dN = shape_functions_quad4((0, 0))
    assert N.tolist() == [0.25] * 4
    assert np.all(dN.sum(axis=0) == 0)
    N, _ = shape_functions_quad4((0.3, -0.2))
    assert N.sum() == pytest.approx(1.0, abs=1e-15)


def test_shape_gradients_match_finite_differences():
    xi = np.array([0.37, -0.61])
    _, dN = shape_functions_quad4(xi)
    h = 1e-6
    for k in range(2):
        step = np.eye(2)[k] * h
        fd = (shape_functions_quad4(xi + step)[0] - shape_functions_quad4(xi - step)[0]) / (2 * h)
        np.testing.assert_allclose(dN[:, k], fd, atol=1e-9)


@pytest.mark.parametrize("a,b", [(a, b) for a in range(4) for b in range(4)])
def test_gauss_2x2_exact_for_cubics(a, b):
    def exact(p):
        return 0.0 if p % 2 else 2.0 / (p + 1)
    q = sum(w * x ** a * y ** b for (x, y), w in zip(GAUSS_2X2.points, GAUSS_2X2.weights))
    assert q == pytest.approx(exact(a) * exact(b), abs=1e-14)
    assert GAUSS_2X2.weights.sum() == 4.0


def test_jacobian_unit_square_and_small_cell():
    m = build_structured_grid(2, 1.0)
    _, dN = shape_functions_quad4((0.2, 0.4))
    J, detJ, _ = jacobian(m, 0, dN)
    np.testing.assert_allclose(J, np.diag([0.5, 0.5]), atol=1e-15)
    assert detJ == pytest.approx(0.25)
    m = build_structured_grid(11, 1.0)
    assert jacobian(m, 37, dN)[1] == pytest.approx(0.0025, rel=1e-12)


def test_collapsed_element_is_degenerate():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    m = Mesh(nodes, np.array([[0, 1, 2, 3]]), "quad4")
    _, dN = shape_functions_quad4((0.1, 0.1))
    with pytest.raises(DegenerateElementError):
        jacobian(m, 0, dN)
    with pytest.raises(DegenerateElementError):
        StiffnessOperator(m, 0.3)


def _B_unit_square(xi=(0.3, -0.5)):
    m = build_structured_grid(2, 1.0)
    _, dN = shape_functions_quad4(xi)
    _, _, inv_J = jacobian(m, 0, dN)
    return m, b_matrix(inv_J, dN)


def test_b_matrix_modes():
    m, B = _B_unit_square()
    x, y = m.nodes[m.elements[0]].T
    np.testing.assert_allclose(B @ np.array([1, 0] * 4), 0, atol=1e-15)
    np.testing.assert_allclose(B @ np.column_stack([x, 0 * x]).ravel(), [1, 0, 0], atol=1e-14)
    np.testing.assert_allclose(B @ np.column_stack([y, x]).ravel(), [0, 0, 2], atol=1e-14)


def test_plane_stress_matrices():
    np.testing.assert_array_equal(constitutive_plane_stress(1.0, 0.0), [[1, 0, 0], [0, 1, 0], [0, 0, 0.5]])
    nu = Fraction(3, 10)
    exact = [[1 / (1 - nu * nu), nu / (1 - nu * nu), 0], [nu / (1 - nu * nu), 1 / (1 - nu * nu), 0],
             [0, 0, (1 - nu) / 2 / (1 - nu * nu)]]
    C = constitutive_plane_stress(1.0, 0.3)
    np.testing.assert_allclose(C, np.array(exact, dtype=float), rtol=1e-15)
    np.testing.assert_allclose(constitutive_plane_stress(0.1, 0.3), 0.1 * C, rtol=1e-15)
    with pytest.raises(InvalidMaterialError):
        constitutive_plane_stress(-1.0, 0.3)


def test_3d_matrices():
    np.testing.assert_array_equal(constitutive_3d(1.0, 0.0), np.diag([1, 1, 1, 0.5, 0.5, 0.5]))
    C = constitutive_3d(1.0, 0.25)
    assert C[0, 1] == pytest.approx(0.4) and C[3, 3] == pytest.approx(0.4) and C[0, 0] == pytest.approx(1.2)
    with pytest.raises(InvalidMaterialError):
        constitutive_3d(1.0, 0.4999999999)


@pytest.mark.parametrize("nu", [0.0, 0.3, 0.45])
@pytest.mark.parametrize("h", [1.0, 0.1])
def test_element_stiffness_matches_closed_form(nu, h):
    m = build_structured_grid(2, h)
    np.testing.assert_allclose(element_stiffness(m, 0, np.ones(4), nu), top99_element(nu), atol=1e-14)


def test_element_stiffness_spectrum_and_linearity():
    m = build_structured_grid(11, 1.0)
    K = element_stiffness(m, 0, np.ones(4), 0.3)
    w = np.linalg.eigvalsh(K)
    assert np.sum(np.abs(w) < 1e-12 * w.max()) == 3 and np.sum(w > 1e-8) == 5
    E = np.array([0.3, 1.0, 0.7, 0.2])
    np.testing.assert_allclose(element_stiffness(m, 5, 2 * E, 0.3), 2 * element_stiffness(m, 5, E, 0.3),
                               rtol=1e-14)


@given(st.lists(st.floats(0.01, 10.0), min_size=4, max_size=4), st.floats(-0.9, 0.49), st.floats(0.01, 5.0))
@settings(max_examples=200, deadline=None)
def test_element_symmetry_and_translations(E, nu, h):
    m = build_structured_grid(2, h)
    K = element_stiffness(m, 0, E, nu)
    scale = np.abs(K).max()
    assert np.abs(K - K.T).max() <= 1e-12 * scale
    for t in ([1, 0] * 4, [0, 1] * 4):
        assert np.abs(K @ np.array(t, dtype=float)).max() <= 1e-11 * scale


def test_tet_element_rigid_modes():
    m = build_structured_tet_mesh(2, 1.0)
    K = element_stiffness(m, 3, [1.0, 0.5, 0.2, 0.9], 0.25)
    w = np.linalg.eigvalsh(K)
    assert np.sum(np.abs(w) < 1e-12 * w.max()) == 6


def test_vectorized_operator_matches_dense_assembly():
    rng = np.random.default_rng(3)
    m = build_structured_grid(3, 1.0)
    E = rng.uniform(0.1, 1.0, m.n_nodes)
    U = rng.standard_normal(m.n_dofs)
    op = StiffnessOperator(m, 0.3)
    K = dense_K(m, E, 0.3)
    np.testing.assert_allclose(op.apply(E, U), K @ U, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(op.assemble(E).toarray(), K, rtol=1e-12, atol=1e-14)


def test_3d_operator_matches_dense_assembly():
    rng = np.random.default_rng(4)
    m = build_structured_tet_mesh(3, 1.0)
    E = rng.uniform(0.1, 1.0, m.n_nodes)
    U = rng.standard_normal(m.n_dofs)
    np.testing.assert_allclose(StiffnessOperator(m, 0.3).apply(E, U), dense_K(m, E, 0.3) @ U, rtol=1e-12,
                               atol=1e-13)


def test_translation_and_zero_give_zero_force():
    m = build_structured_grid(6, 1.0)
    op = StiffnessOperator(m, 0.3)
    E = np.random.default_rng(0).uniform(0.1, 1, m.n_nodes)
    norm = np.abs(op.assemble(E)).max()
    assert np.abs(op.apply(E, np.tile([1.0, 0.0], m.n_nodes))).max() <= 1e-11 * norm
    assert np.all(op.apply(E, np.zeros(m.n_dofs)) == 0)


@given(st.integers(3, 9), st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.floats(0.0, 0.45))
@settings(max_examples=30, deadline=None)
def test_patch_linear_field_has_no_interior_residual(n, coef, nu):
    m = build_structured_grid(n, 1.0)
    A = np.array(coef[:4]).reshape(2, 2)
    U = (m.nodes @ A.T + np.array(coef[4:])).ravel()
    op = StiffnessOperator(m, nu)
    R = op.apply(np.full(m.n_nodes, 0.7), U).reshape(-1, 2)
    x, y = m.nodes.T
    interior = (x > 0) & (x < 1) & (y > 0) & (y < 1)
    scale = max(1.0, np.abs(op.assemble(np.full(m.n_nodes, 0.7)) @ U).max(), np.abs(A).max())
    assert np.abs(R[interior]).max(initial=0.0) <= 1e-10 * scale


def test_energy_gradient_is_twice_KU():
    rng = np.random.default_rng(7)
    m = build_structured_grid(4, 1.0)
    op = StiffnessOperator(m, 0.3)
    E = rng.uniform(0.1, 1, m.n_nodes)
    U = rng.standard_normal(m.n_dofs)

    def quad(u):
        return float(u @ op.apply(E, u))

    h = 1e-6
    fd = np.array([(quad(U + h * e) - quad(U - h * e)) / (2 * h) for e in np.eye(m.n_dofs)])
    g = 2 * op.apply(E, U)
    assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-6
    assert op.energy(E, U) == pytest.approx(0.5 * quad(U), rel=1e-14)
