"""Element-level finite element kernels for small-strain linear elasticity.

Quadrilaterals use bilinear shape functions with 2x2 Gauss quadrature and a
plane-stress material law; tetrahedra use linear shape functions, a single
quadrature point and the isotropic 3D law.  Young's modulus is a nodal field
interpolated to the quadrature points, so the constitutive matrix varies
inside an element.

Because the stiffness is linear in the nodal moduli, each element matrix is
stored as four basis matrices, ``K_e = sum_a E_a * Kbasis[e, a]``.  The
:class:`StiffnessOperator` keeps those bases for a mesh and serves both the
reference solver and the training losses.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateElementError, DimensionMismatchError, InvalidMaterialError
from .mesh import Mesh

DETJ_MIN = 1e-14

_G = 1.0 / np.sqrt(3.0)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray


GAUSS_2X2 = QuadratureRule(
    points=np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]]),
    weights=np.ones(4),
)

TET_ONE_POINT = QuadratureRule(points=np.array([[0.25, 0.25, 0.25]]), weights=np.array([1.0 / 6.0]))


def quadrature_rule(element_kind: str) -> QuadratureRule:
    return GAUSS_2X2 if element_kind == "quad4" else TET_ONE_POINT


def shape_functions_quad4(xi):
    """Bilinear shape functions and their parent-space gradients.

    Node order is counter-clockwise starting at (-1, -1).  Returns
    ``values`` with shape (4,) and ``gradients`` with shape (4, 2) holding
    (dN/dxi, dN/deta) per node.
    """
    x, e = float(xi[0]), float(xi[1])
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    se = np.array([-1.0, -1.0, 1.0, 1.0])
    values = 0.25 * (1 + sx * x) * (1 + se * e)
    gradients = np.column_stack([0.25 * sx * (1 + se * e), 0.25 * se * (1 + sx * x)])
    return values, gradients


def shape_functions_tet4(xi):
    x, e, z = (float(v) for v in xi)
    values = np.array([1.0 - x - e - z, x, e, z])
    gradients = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return values, gradients


def shape_functions(element_kind: str, xi):
    if element_kind == "quad4":
        return shape_functions_quad4(xi)
    return shape_functions_tet4(xi)


def jacobian(mesh: Mesh, element: int, parent_gradients):
    """Jacobian ``J[i, j] = d x_j / d xi_i`` of one element.

    Returns ``(J, detJ, inv_J)``; raises :class:`DegenerateElementError`
    when ``detJ <= 1e-14``.
    """
    X = mesh.nodes[mesh.elements[element]]
    J = np.asarray(parent_gradients).T @ X
    detJ = float(np.linalg.det(J))
    if detJ <= DETJ_MIN:
        raise DegenerateElementError(f"element {element}: det(J) = {detJ:.3e}")
    return J, detJ, np.linalg.inv(J)


def b_matrix(inv_J, parent_gradients) -> np.ndarray:
    """Strain-displacement matrix with interleaved DOF columns.

    Rows are (exx, eyy, gxy) in 2D and (exx, eyy, ezz, gyz, gxz, gxy) in 3D,
    shear entries being engineering strains.
    """
    dN = np.asarray(parent_gradients) @ np.asarray(inv_J).T
    n_nodes, dim = dN.shape
    B = np.zeros((3 if dim == 2 else 6, n_nodes * dim))
    if dim == 2:
        B[0, 0::2] = dN[:, 0]
        B[1, 1::2] = dN[:, 1]
        B[2, 0::2] = dN[:, 1]
        B[2, 1::2] = dN[:, 0]
    else:
        B[0, 0::3] = dN[:, 0]
        B[1, 1::3] = dN[:, 1]
        B[2, 2::3] = dN[:, 2]
        B[3, 1::3] = dN[:, 2]
        B[3, 2::3] = dN[:, 1]
        B[4, 0::3] = dN[:, 2]
        B[4, 2::3] = dN[:, 0]
        B[5, 0::3] = dN[:, 1]
        B[5, 1::3] = dN[:, 0]
    return B


def constitutive_plane_stress(E: float, nu: float) -> np.ndarray:
    if not (np.isfinite(E) and E > 0) or not abs(nu) < 1:
        raise InvalidMaterialError(f"plane stress needs E > 0 and |nu| < 1, got E={E}, nu={nu}")
    return E / (1.0 - nu * nu) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
    )


def lame_parameters(E: float, nu: float):
    return E * nu / ((1 - 2 * nu) * (1 + nu)), E / (2 * (1 + nu))


def constitutive_3d(E: float, nu: float) -> np.ndarray:
    # 1e-9 margin keeps the matrix numerically positive definite
    if not (np.isfinite(E) and E > 0) or not (-1 < nu < 0.5 - 1e-9):
        raise InvalidMaterialError(f"3D elasticity needs E > 0 and -1 < nu < 0.5, got E={E}, nu={nu}")
    lam, mu = lame_parameters(E, nu)
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] = lam + 2 * mu
    C[np.arange(3, 6), np.arange(3, 6)] = mu
    return C


def constitutive(dim: int, E: float, nu: float) -> np.ndarray:
    return constitutive_plane_stress(E, nu) if dim == 2 else constitutive_3d(E, nu)


def element_stiffness(mesh: Mesh, element: int, nodal_E, nu: float) -> np.ndarray:
    """Stiffness matrix of one element with E interpolated at each point.

    ``K_e = sum_n w_n detJ_n B_n^T C(E(xi_n)) B_n``.  For tet4 the single
    point sees the average of the four nodal moduli.
    """
    nodal_E = np.asarray(nodal_E, dtype=np.float64)
    if np.any(~np.isfinite(nodal_E)) or np.any(nodal_E <= 0):
        raise InvalidMaterialError(f"nodal moduli must be positive, got {nodal_E}")
    rule = quadrature_rule(mesh.element_kind)
    size = mesh.elements.shape[1] * mesh.dim
    K = np.zeros((size, size))
    for xi, w in zip(rule.points, rule.weights):
        N, dN = shape_functions(mesh.element_kind, xi)
        _, detJ, inv_J = jacobian(mesh, element, dN)
        B = b_matrix(inv_J, dN)
        C = constitutive(mesh.dim, float(N @ nodal_E), nu)
        K += w * detJ * B.T @ C @ B
    return K


class StiffnessOperator:
    """Precomputed geometry of a mesh for fast, vectorized stiffness work.

    Attributes
    ----------
    kbasis : (n_el, 4, s, s) array
        Element stiffness per unit nodal modulus, ``s = 4 * dim``.
    B : (n_el, n_q, n_strain, s) array
        Strain-displacement matrices at the quadrature points.
    wdet : (n_el, n_q) array
        Quadrature weight times det(J).
    N : (n_q, 4) array
        Shape function values at the quadrature points.
    """

    def __init__(self, mesh: Mesh, nu: float):
        self.mesh = mesh
        self.nu = float(nu)
        self.C0 = constitutive(mesh.dim, 1.0, self.nu)
        rule = quadrature_rule(mesh.element_kind)
        N_q, dN_q = zip(*(shape_functions(mesh.element_kind, xi) for xi in rule.points))
        self.N = np.array(N_q)
        dN_q = np.array(dN_q)  # (n_q, 4, dim)
        X = mesh.nodes[mesh.elements]  # (n_el, 4, dim)
        J = np.einsum("qai,eaj->eqij", dN_q, X)
        detJ = np.linalg.det(J)
        if np.any(detJ <= DETJ_MIN):
            bad = int(np.argwhere(detJ <= DETJ_MIN)[0, 0])
            raise DegenerateElementError(f"element {bad}: det(J) = {detJ.min():.3e}")
        inv_J = np.linalg.inv(J)
        dN_x = np.einsum("qai,eqji->eqaj", dN_q, inv_J)
        n_el, n_q = detJ.shape
        dim = mesh.dim
        s = 4 * dim
        B = np.zeros((n_el, n_q, 3 if dim == 2 else 6, s))
        if dim == 2:
            B[..., 0, 0::2] = dN_x[..., 0]
            B[..., 1, 1::2] = dN_x[..., 1]
            B[..., 2, 0::2] = dN_x[..., 1]
            B[..., 2, 1::2] = dN_x[..., 0]
        else:
            for row, (i, j) in enumerate([(0, 0), (1, 1), (2, 2)]):
                B[..., row, i::3] = dN_x[..., j]
            for row, (a, b) in zip((3, 4, 5), [(1, 2), (0, 2), (0, 1)]):
                B[..., row, a::3] = dN_x[..., b]
                B[..., row, b::3] = dN_x[..., a]
        self.B = B
        self.wdet = detJ * rule.weights
        self.measure = self.wdet.sum(axis=1)
        self.element_dofs = mesh.element_dofs()
        # K per unit modulus at each quadrature point, then split over nodes
        kq = np.einsum("eq,eqki,kl,eqlj->eqij", self.wdet, B, self.C0, B)
        self.kbasis = np.einsum("qa,eqij->eaij", self.N, kq)

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_dofs

    def _check_E(self, E):
        E = np.asarray(E, dtype=np.float64)
        if E.shape[-1] != self.mesh.n_nodes:
            raise DimensionMismatchError(f"expected {self.mesh.n_nodes} nodal moduli, got {E.shape[-1]}")
        return E

    def element_matrices(self, E) -> np.ndarray:
        """All element stiffness matrices for nodal moduli ``E``."""
        E = self._check_E(E)
        return np.einsum("ea,eaij->eij", E[self.mesh.elements], self.kbasis)

    def apply(self, E, U) -> np.ndarray:
        """Matrix-free product ``K(E) @ U`` by gather/scatter over elements."""
        E = self._check_E(E)
        U = np.asarray(U, dtype=np.float64)
        if U.shape[-1] != self.n_dofs:
            raise DimensionMismatchError(f"expected {self.n_dofs} DOFs, got {U.shape[-1]}")
        Ue = U[self.element_dofs]
        re = np.einsum("ea,eaij,ej->ei", E[self.mesh.elements], self.kbasis, Ue)
        R = np.zeros(self.n_dofs)
        np.add.at(R, self.element_dofs.ravel(), re.ravel())
        return R

    def energy(self, E, U) -> float:
        """Strain energy ``0.5 * U^T K U``."""
        return 0.5 * float(np.dot(U, self.apply(E, U)))

    @cached_property
    def _coo_index(self):
        dofs = self.element_dofs
        s = dofs.shape[1]
        rows = np.repeat(dofs, s, axis=1).ravel()
        cols = np.tile(dofs, (1, s)).ravel()
        return rows, cols

    def assemble(self, E) -> sp.csr_matrix:
        rows, cols = self._coo_index
        Ke = self.element_matrices(E)
        K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        return K.tocsr()


def apply_global_stiffness(mesh: Mesh, field, U, operator: StiffnessOperator | None = None) -> np.ndarray:
    """Residual-free internal force ``K U`` for an elasticity field."""
    op = operator if operator is not None else StiffnessOperator(mesh, field.nu)
    return op.apply(field.E, U)
