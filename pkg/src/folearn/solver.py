"""Reference FEM solution of ``K U = F`` and nodal stress recovery."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, SingularSystemError
from .fem import StiffnessOperator
from .mesh import DofMap, Mesh

log = logging.getLogger(__name__)

STRESS_COMPONENTS = {2: ("sigma_xx", "sigma_yy", "sigma_xy"),
                     3: ("sigma_xx", "sigma_yy", "sigma_zz", "sigma_yz", "sigma_xz", "sigma_xy")}
DISPLACEMENT_COMPONENTS = {2: ("u", "v"), 3: ("u", "v", "w")}


@dataclass(eq=False)
class SolutionField:
    """Nodal displacements (interleaved DOF vector) and nodal stresses."""

    mesh: Mesh
    U: np.ndarray
    stress: np.ndarray
    E: np.ndarray | None = None

    @property
    def displacements(self) -> np.ndarray:
        """(n_nodes, dim) view of ``U``."""
        return self.U.reshape(-1, self.mesh.dim)

    def component(self, name: str) -> np.ndarray:
        dim = self.mesh.dim
        if name in DISPLACEMENT_COMPONENTS[dim]:
            return self.displacements[:, DISPLACEMENT_COMPONENTS[dim].index(name)]
        if name in STRESS_COMPONENTS[dim]:
            return self.stress[:, STRESS_COMPONENTS[dim].index(name)]
        if name == "E" and self.E is not None:
            return self.E
        raise KeyError(name)

    @property
    def component_names(self) -> tuple:
        dim = self.mesh.dim
        return DISPLACEMENT_COMPONENTS[dim] + STRESS_COMPONENTS[dim]


def pcg(A, b, x0=None, tol=1e-10, max_iter=None, stall_window=50):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Stops once ``||r|| <= tol * ||b||``.  Raises :class:`SingularSystemError`
    when the residual has not improved for ``stall_window`` iterations or
    ``max_iter`` (default ``10 n``) is exceeded.  Returns ``(x, iterations)``.
    """
    n = len(b)
    max_iter = 10 * n if max_iter is None else max_iter
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SingularSystemError("non-positive diagonal entry in the stiffness matrix")
    inv_diag = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    target = tol * bnorm
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    best = np.linalg.norm(r)
    since_best = 0
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0:
            raise SingularSystemError(f"CG breakdown at iteration {it}: p^T A p = {pAp:.3e}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            return x, it
        if rnorm < best:
            best, since_best = rnorm, 0
        else:
            since_best += 1
            if since_best >= stall_window:
                raise SingularSystemError(f"CG stalled at relative residual {rnorm / bnorm:.3e}")
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SingularSystemError(f"CG did not converge in {max_iter} iterations "
                              f"(relative residual {rnorm / bnorm:.3e})")


def solve_reference(mesh: Mesh, dof_map: DofMap, field, nu: float | None = None,
                    tol: float = 1e-12, operator: StiffnessOperator | None = None) -> SolutionField:
    """Solve the Dirichlet problem by elimination and PCG on the free DOFs."""
    nu = field.nu if nu is None else nu
    E = np.asarray(field.E, dtype=np.float64)
    if E.shape != (mesh.n_nodes,):
        raise DimensionMismatchError(f"field has {E.shape} values for {mesh.n_nodes} nodes")
    op = operator if operator is not None and operator.nu == nu else StiffnessOperator(mesh, nu)
    U = dof_map.full_vector()
    n_rigid = mesh.dim * (mesh.dim + 1) // 2
    if dof_map.n_free and len(dof_map.prescribed_dofs) < n_rigid:
        raise SingularSystemError(
            f"{len(dof_map.prescribed_dofs)} prescribed DOFs cannot remove {n_rigid} rigid-body modes")
    if dof_map.n_free:
        K = op.assemble(E)
        free, fixed = dof_map.free_dofs, dof_map.prescribed_dofs
        K_ff = K[free][:, free]
        rhs = -(K[free][:, fixed] @ dof_map.prescribed_values) if len(fixed) else np.zeros(len(free))
        U[free], iters = pcg(K_ff, rhs, tol=tol)
        log.debug("PCG converged in %d iterations (%d free DOFs)", iters, len(free))
    return SolutionField(mesh, U, recover_stress(mesh, field, nu, U, operator=op), E=E.copy())


def element_stresses(op: StiffnessOperator, E, U) -> np.ndarray:
    """Element-mean stress: average of ``C(xi) B(xi) U_e`` over quadrature points."""
    Ue = np.asarray(U)[op.element_dofs]
    Eq = np.asarray(E)[op.mesh.elements] @ op.N.T  # (n_el, n_q)
    strain = np.einsum("eqkj,ej->eqk", op.B, Ue)
    stress = Eq[..., None] * np.einsum("kl,eql->eqk", op.C0, strain)
    return stress.mean(axis=1)


def recover_stress(mesh: Mesh, field, nu, U, operator: StiffnessOperator | None = None) -> np.ndarray:
    """Nodal stresses as element-measure weighted averages of element stresses."""
    op = operator if operator is not None and operator.nu == nu else StiffnessOperator(mesh, nu)
    sig_e = element_stresses(op, field.E, U)
    n_comp = sig_e.shape[1]
    acc = np.zeros((mesh.n_nodes, n_comp))
    weight = np.zeros(mesh.n_nodes)
    for a in range(mesh.elements.shape[1]):
        np.add.at(acc, mesh.elements[:, a], op.measure[:, None] * sig_e)
        np.add.at(weight, mesh.elements[:, a], op.measure)
    return acc / weight[:, None]


def homogenize(mesh: Mesh, values) -> np.ndarray:
    """Arithmetic mean over nodes of each component of a nodal field."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != mesh.n_nodes:
        raise DimensionMismatchError(f"expected {mesh.n_nodes} nodal rows, got {values.shape[0]}")
    return values.mean(axis=0)


def strain_energy(mesh: Mesh, field, U, operator: StiffnessOperator | None = None) -> float:
    op = operator if operator is not None else StiffnessOperator(mesh, field.nu)
    return op.energy(field.E, U)

