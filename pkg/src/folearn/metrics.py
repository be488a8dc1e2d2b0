"""Pointwise and homogenized error measures between two solution fields."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import MeshMismatchError, UnstructuredMeshError
from .microstructure import upsample_bilinear

HOMOGENIZED_GUARD = 1e-14
DEFAULT_EVAL_GRID = 100


@dataclass(frozen=True)
class ErrorReport:
    """Per-component errors of ``a`` against reference ``b``.

    ``homogenized_abs`` lists components whose reference mean is below the
    guard; their ``homogenized_rel`` entry holds the absolute difference.
    """

    components: tuple
    err_mse: dict
    err_max: dict
    homogenized_rel: dict
    homogenized_abs: tuple = ()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "err_mse", "err_max", "homogenized_rel", "homogenized_is_absolute"])
        for c in self.components:
            w.writerow([c, repr(self.err_mse[c]), repr(self.err_max[c]), repr(self.homogenized_rel[c]),
                        int(c in self.homogenized_abs)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'component':<10} {'err_mse':>12} {'err_max':>12} {'hom_rel':>12}"]
        for c in self.components:
            flag = " (abs)" if c in self.homogenized_abs else ""
            lines.append(f"{c:<10} {self.err_mse[c]:12.4e} {self.err_max[c]:12.4e} "
                         f"{self.homogenized_rel[c]:12.4e}{flag}")
        return "\n".join(lines)


def compare_fields(a, b, eval_grid: int | None = DEFAULT_EVAL_GRID) -> ErrorReport:
    """Errors of field ``a`` relative to reference ``b`` on the same mesh.

    On structured 2D grids both fields are first interpolated bilinearly to
    an ``eval_grid`` x ``eval_grid`` grid (``None`` compares nodal values).
    """
    if not a.mesh.same_as(b.mesh):
        raise MeshMismatchError("fields live on different meshes")
    if eval_grid is not None and a.mesh.dim == 2 and a.mesh.is_structured:
        a, b = upsample_bilinear(a, eval_grid), upsample_bilinear(b, eval_grid)
    names = a.component_names
    mse, mx, hom, flagged = {}, {}, {}, []
    for c in names:
        va, vb = a.component(c), b.component(c)
        d = va - vb
        mse[c] = float(np.sqrt(np.mean(d * d)))
        mx[c] = float(np.max(np.abs(d)))
        ma, mb = float(np.mean(va)), float(np.mean(vb))
        if abs(mb) < HOMOGENIZED_GUARD:
            hom[c] = abs(ma - mb)
            flagged.append(c)
        else:
            hom[c] = abs(ma - mb) / abs(mb)
    return ErrorReport(tuple(names), mse, mx, hom, tuple(flagged))


def displacement_errors(report: ErrorReport):
    """Largest ``err_mse`` and ``err_max`` over the displacement components."""
    disp = [c for c in report.components if c in ("u", "v", "w")]
    return max(report.err_mse[c] for c in disp), max(report.err_max[c] for c in disp)


def extract_cross_section(field, axis: str, coordinate: float, component: str):
    """``(position, value)`` pairs along the grid line nearest ``coordinate``.

    ``axis="x"`` walks along x at the row nearest ``y = coordinate``.
    """
    mesh = field.mesh
    if mesh.grid_shape is None or mesh.dim != 2:
        raise UnstructuredMeshError("cross sections need a structured 2D grid")
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    n = mesh.grid_shape[0]
    L = float(mesh.nodes[:, 0].max())
    if not -1e-12 <= coordinate <= L + 1e-12:
        raise ValueError(f"coordinate {coordinate} outside [0, {L}]")
    k = int(round(coordinate / L * (n - 1)))
    values = field.component(component)
    idx = k * n + np.arange(n) if axis == "x" else np.arange(n) * n + k
    pos = mesh.nodes[idx, 0 if axis == "x" else 1]
    return [(float(p), float(v)) for p, v in zip(pos, values[idx])]
