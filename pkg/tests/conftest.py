import numpy as np
import pytest

from folearn.mesh import Mesh, build_dof_map, build_structured_grid

ACCEPTANCE = {}

DEFAULT_BCS = [("left", 0, 0.0), ("left", 1, 0.0), ("right", 0, 0.05), ("right", 1, 0.05)]


def with_corner_set(mesh):
    """Copy of a grid with the origin node exposed as set ``corner``."""
    sets = dict(mesh.node_sets)
    sets["corner"] = np.array([0])
    return Mesh(mesh.nodes, mesh.elements, mesh.element_kind, sets, mesh.grid_shape)


def uniaxial_patch(n=11):
    mesh = with_corner_set(build_structured_grid(n, 1.0))
    dm = build_dof_map(mesh, [("left", 0, 0.0), ("corner", 1, 0.0), ("right", 0, 0.05)])
    return mesh, dm


@pytest.fixture
def grid11():
    return build_structured_grid(11, 1.0)


@pytest.fixture
def default_dofs(grid11):
    return build_dof_map(grid11, DEFAULT_BCS)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{key:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
