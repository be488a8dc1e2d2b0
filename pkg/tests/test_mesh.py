import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from folearn.errors import MeshParseError, TopologyError, UnknownNodeSetError
from folearn.mesh import (build_dof_map, build_structured_grid, build_structured_tet_mesh, dump_tet_mesh,
                          load_tet_mesh, tet_signed_volumes)

UNIT_TET = "NODES 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\nELEMS 1\n0 1 2 3\n"

# cube corners, six tets around the main diagonal 0-6
CUBE_6 = """# unit cube
NODES 8
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
ELEMS 6
0 1 2 6
0 2 3 6
0 3 7 6
0 7 4 6
0 4 5 6
0 5 1 6
"""


def test_grid_11_counts():
    m = build_structured_grid(11, 1.0)
    assert m.n_nodes == 121 and m.n_elements == 100 and m.dim == 2


def test_grid_2_all_nodes_on_boundary():
    m = build_structured_grid(2, 1.0)
    assert m.n_nodes == 4 and m.n_elements == 1
    on_boundary = set()
    for name in ("left", "right", "top", "bottom"):
        on_boundary |= set(m.node_set(name).tolist())
    assert on_boundary == {0, 1, 2, 3}


def test_grid_51_sets_match_predicates():
    m = build_structured_grid(51, 1.0)
    assert m.n_nodes == 2601 and m.n_elements == 2500
    x = m.nodes[:, 0]
    assert len(m.node_set("left")) == 51 == np.count_nonzero(x == 0.0)
    assert len(m.node_set("right")) == 51 == np.count_nonzero(np.isclose(x, 1.0))


@given(st.integers(2, 15), st.floats(0.1, 10.0))
@settings(max_examples=25, deadline=None)
def test_grid_node_positions(n, L):
    m = build_structured_grid(n, L)
    i = np.arange(n * n)
    expected = np.column_stack([(i % n) / (n - 1), (i // n) / (n - 1)]) * L
    np.testing.assert_allclose(m.nodes, expected, rtol=0, atol=1e-12 * L)
    # counter-clockwise: positive shoelace area for every element
    p = m.nodes[m.elements]
    area = 0.5 * np.sum(p[:, :, 0] * np.roll(p[:, :, 1], -1, 1) - np.roll(p[:, :, 0], -1, 1) * p[:, :, 1], axis=1)
    assert np.all(area > 0)


@given(st.integers(3, 12))
@settings(max_examples=10, deadline=None)
def test_node_valence(n):
    m = build_structured_grid(n, 1.0)
    count = np.bincount(m.elements.ravel(), minlength=m.n_nodes)
    corners = [0, n - 1, n * (n - 1), n * n - 1]
    assert np.all(count[corners] == 1)
    ij = np.arange(n * n)
    interior = ((ij % n) > 0) & ((ij % n) < n - 1) & ((ij // n) > 0) & ((ij // n) < n - 1)
    assert np.all(count[interior] == 4)


def test_grid_rejects_small_n():
    with pytest.raises(ValueError):
        build_structured_grid(1, 1.0)


def test_unit_tet_volume():
    m = load_tet_mesh(UNIT_TET)
    assert tet_signed_volumes(m.nodes, m.elements)[0] == pytest.approx(1 / 6)


def test_cube_six_tets_volume():
    m = load_tet_mesh(CUBE_6)
    vol = tet_signed_volumes(m.nodes, m.elements)
    assert np.all(vol > 0)
    assert vol.sum() == pytest.approx(1.0, abs=1e-14)


def test_negative_tets_are_reoriented():
    m = load_tet_mesh(UNIT_TET.replace("0 1 2 3", "0 2 1 3"))
    assert tet_signed_volumes(m.nodes, m.elements)[0] == pytest.approx(1 / 6)


def test_out_of_range_node_is_topology_error():
    with pytest.raises(TopologyError):
        load_tet_mesh(UNIT_TET.replace("0 1 2 3", "0 1 2 99"))


def test_parse_error_carries_line_number():
    with pytest.raises(MeshParseError) as info:
        load_tet_mesh("NODES 2\n0 0 0\n1 x 0\nELEMS 0\n")
    assert info.value.line == 3


def test_tet_round_trip():
    m = build_structured_tet_mesh(3, 2.0)
    again = load_tet_mesh(dump_tet_mesh(m))
    assert np.array_equal(again.nodes, m.nodes)
    assert np.array_equal(again.elements, m.elements)
    for name in m.node_sets:
        assert np.array_equal(again.node_set(name), m.node_set(name))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_structured_tets_fill_the_cube(n):
    m = build_structured_tet_mesh(n, 1.0)
    vol = tet_signed_volumes(m.nodes, m.elements)
    assert m.n_elements == 6 * (n - 1) ** 3
    assert np.all(vol > 0) and vol.sum() == pytest.approx(1.0, abs=1e-13)
    assert len(m.node_set("back")) == n * n
    assert np.all(m.nodes[m.node_set("front"), 2] == 1.0)


def test_default_dof_map_counts():
    m = build_structured_grid(11, 1.0)
    dm = build_dof_map(m, [("left", 0, 0.0), ("left", 1, 0.0), ("right", 0, 0.05), ("right", 1, 0.05)])
    assert len(dm.prescribed_dofs) == 44 and dm.n_free == 198 and dm.n_db == 22


def test_empty_dof_map_is_all_free():
    m = build_structured_grid(4, 1.0)
    dm = build_dof_map(m, [])
    assert np.array_equal(dm.free_dofs, np.arange(m.n_dofs))


def test_fully_constrained_2x2():
    m = build_structured_grid(2, 1.0)
    dm = build_dof_map(m, [(s, c, 0.0) for s in ("left", "right") for c in (0, 1)])
    assert len(dm.prescribed_dofs) == 8 and dm.n_free == 0


def test_last_writer_wins_and_interleaving():
    m = build_structured_grid(3, 1.0)
    dm = build_dof_map(m, [("bottom", 1, 1.0), ("left", 1, 2.0)])
    # node 0 is on both sets; its v DOF is 0*2+1
    assert dm.prescribed[1] == 2.0
    assert dm.prescribed[2 * 1 + 1] == 1.0


@given(st.integers(2, 8), st.lists(st.tuples(st.sampled_from(["left", "right", "top", "bottom"]),
                                            st.integers(0, 1), st.floats(-1, 1)), max_size=6))
@settings(max_examples=40, deadline=None)
def test_dof_partition(n, entries):
    m = build_structured_grid(n, 1.0)
    dm = build_dof_map(m, entries)
    both = np.concatenate([dm.prescribed_dofs, dm.free_dofs])
    assert np.array_equal(np.sort(both), np.arange(m.n_dofs))
    assert np.all(np.diff(dm.free_dofs) > 0)


def test_unknown_set():
    with pytest.raises(UnknownNodeSetError):
        build_dof_map(build_structured_grid(3, 1.0), [("middle", 0, 0.0)])
