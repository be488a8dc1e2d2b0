"""Meshes, boundary node sets and DOF bookkeeping.

Two element families are supported: bilinear quadrilaterals (``quad4``) on
structured square grids and linear tetrahedra (``tet4``) read from a small
line-oriented text format or generated on a structured cube.

Node numbering on structured grids is row-major with x running fastest, so
node ``i`` of an ``n x n`` grid sits at ``((i % n) h, (i // n) h)``.
DOFs are interleaved per node: ``[u0, v0, u1, v1, ...]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MeshParseError, TopologyError, UnknownNodeSetError

BOUNDARY_TOL = 1e-9

NODES_PER_ELEMENT = {"quad4": 4, "tet4": 4}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Nodes, connectivity and named boundary node sets.

    ``grid_shape`` is set for structured grids (nodes per side along each
    axis) and ``None`` for meshes read from file.
    """

    nodes: np.ndarray
    elements: np.ndarray
    element_kind: str
    node_sets: dict = field(default_factory=dict)
    grid_shape: tuple | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
            raise TopologyError(f"nodes must be (n, 2) or (n, 3), got {nodes.shape}")
        if self.element_kind not in NODES_PER_ELEMENT:
            raise TopologyError(f"unsupported element kind {self.element_kind!r}")
        if elements.ndim != 2 or elements.shape[1] != NODES_PER_ELEMENT[self.element_kind]:
            raise TopologyError(f"bad connectivity shape {elements.shape}")
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            bad = int(elements.max()) if elements.max() >= len(nodes) else int(elements.min())
            raise TopologyError(f"element references node {bad}, mesh has {len(nodes)} nodes")
        for k, conn in enumerate(elements):
            if len(set(conn.tolist())) != len(conn):
                raise TopologyError(f"element {k} repeats a node index: {conn.tolist()}")
        sets = {name: np.unique(np.asarray(ids, dtype=np.int64)) for name, ids in self.node_sets.items()}
        nodes.setflags(write=False)
        elements.setflags(write=False)
        for ids in sets.values():
            ids.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "node_sets", sets)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.dim

    @property
    def is_structured(self) -> bool:
        return self.grid_shape is not None

    def node_set(self, name: str) -> np.ndarray:
        try:
            return self.node_sets[name]
        except KeyError:
            raise UnknownNodeSetError(
                f"unknown node set {name!r}; available: {sorted(self.node_sets)}"
            ) from None

    def element_dofs(self) -> np.ndarray:
        """(n_elements, nodes_per_element * dim) interleaved DOF indices."""
        d = self.dim
        return (self.elements[:, :, None] * d + np.arange(d)).reshape(self.n_elements, -1)

    def same_as(self, other: "Mesh") -> bool:
        return (
            self is other
            or (
                self.element_kind == other.element_kind
                and self.nodes.shape == other.nodes.shape
                and self.elements.shape == other.elements.shape
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.elements, other.elements)
            )
        )


def _box_node_sets(nodes: np.ndarray, tol: float = BOUNDARY_TOL) -> dict:
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    names = [("left", "right"), ("bottom", "top"), ("back", "front")]
    sets = {}
    for axis in range(nodes.shape[1]):
        low_name, high_name = names[axis]
        sets[low_name] = np.flatnonzero(np.abs(nodes[:, axis] - lo[axis]) <= tol)
        sets[high_name] = np.flatnonzero(np.abs(nodes[:, axis] - hi[axis]) <= tol)
    return sets


def build_structured_grid(n_per_side: int, side_length: float = 1.0) -> Mesh:
    """Square grid of ``n_per_side**2`` nodes and CCW quad4 elements.

    Node sets ``left``, ``right``, ``bottom`` and ``top`` are found with the
    coordinate predicates x=0, x=L, y=0, y=L.
    """
    n = int(n_per_side)
    if n != n_per_side or n < 2:
        raise ValueError(f"n_per_side must be an integer >= 2, got {n_per_side}")
    if not side_length > 0:
        raise ValueError(f"side_length must be positive, got {side_length}")
    idx = np.arange(n * n)
    h = side_length / (n - 1)
    nodes = np.column_stack([(idx % n) * h, (idx // n) * h])
    # exact boundary coordinates avoid drift from the multiplication
    nodes[idx % n == n - 1, 0] = side_length
    nodes[idx // n == n - 1, 1] = side_length
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    k = (j * n + i).ravel()
    elements = np.column_stack([k, k + 1, k + 1 + n, k + n])
    L = side_length
    sets = {
        "left": np.flatnonzero(np.abs(nodes[:, 0]) <= BOUNDARY_TOL),
        "right": np.flatnonzero(np.abs(nodes[:, 0] - L) <= BOUNDARY_TOL),
        "bottom": np.flatnonzero(np.abs(nodes[:, 1]) <= BOUNDARY_TOL),
        "top": np.flatnonzero(np.abs(nodes[:, 1] - L) <= BOUNDARY_TOL),
    }
    return Mesh(nodes, elements, "quad4", sets, grid_shape=(n, n))


def tet_signed_volumes(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = nodes[elements]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    c = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


def _orient_tets(nodes, elements):
    elements = np.array(elements, dtype=np.int64, copy=True)
    vol = tet_signed_volumes(nodes, elements)
    flip = vol < 0
    elements[flip, 1], elements[flip, 2] = elements[flip, 2].copy(), elements[flip, 1].copy()
    return elements


def build_structured_tet_mesh(n_per_side: int, side_length: float = 1.0) -> Mesh:
    """Cube of ``(n-1)**3`` cells, each split into 6 tetrahedra.

    Every cell is cut along its main diagonal, which keeps the faces
    conforming between neighbouring cells.  Box faces are exposed as node
    sets ``left/right`` (x), ``bottom/top`` (y) and ``back/front`` (z).
    """
    n = int(n_per_side)
    if n < 2:
        raise ValueError(f"n_per_side must be >= 2, got {n_per_side}")
    h = side_length / (n - 1)
    k, j, i = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    nodes = np.column_stack([i.ravel() * h, j.ravel() * h, k.ravel() * h])

    def nid(a, b, c):
        return a + n * b + n * n * c

    tets = []
    for c in range(n - 1):
        for b in range(n - 1):
            for a in range(n - 1):
                for perm in itertools.permutations(range(3)):
                    pos = [a, b, c]
                    path = [nid(*pos)]
                    for axis in perm:
                        pos[axis] += 1
                        path.append(nid(*pos))
                    tets.append(path)
    elements = _orient_tets(nodes, np.array(tets))
    return Mesh(nodes, elements, "tet4", _box_node_sets(nodes), grid_shape=(n, n, n))


def load_tet_mesh(text: str) -> Mesh:
    """Parse the NODES/ELEMS/SET text format into a tet4 mesh.

    Elements with negative volume are reoriented by swapping two nodes.
    Bounding-box faces are added as node sets unless the file defines a set
    with the same name.
    """
    lines = [
        (no, line.strip())
        for no, line in enumerate(text.splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    pos = 0

    def header(keyword):
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError(f"expected {keyword} header, got end of file", None)
        no, line = lines[pos]
        parts = line.split()
        if parts[0] != keyword or len(parts) != (3 if keyword == "SET" else 2):
            raise MeshParseError(f"expected '{keyword} <count>', got {line!r}", no)
        try:
            count = int(parts[-1])
        except ValueError:
            raise MeshParseError(f"bad count {parts[-1]!r}", no) from None
        if count < 0:
            raise MeshParseError(f"negative count {count}", no)
        pos += 1
        return parts, count

    def rows(count, width, kind):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(lines):
                raise MeshParseError(f"file ended inside a {kind} block", None)
            no, line = lines[pos]
            parts = line.split()
            if len(parts) != width:
                raise MeshParseError(f"expected {width} values, got {len(parts)}", no)
            try:
                out.append([kind_cast[kind](v) for v in parts])
            except ValueError:
                raise MeshParseError(f"cannot parse {line!r}", no) from None
            pos += 1
        return out

    kind_cast = {"node": float, "element": int, "set": int}
    _, n_nodes = header("NODES")
    nodes = np.array(rows(n_nodes, 3, "node"), dtype=np.float64).reshape(-1, 3)
    elem_line = lines[pos][0] if pos < len(lines) else None
    _, n_elems = header("ELEMS")
    elements = np.array(rows(n_elems, 4, "element"), dtype=np.int64).reshape(-1, 4)
    if elements.size and (elements.min() < 0 or elements.max() >= n_nodes):
        bad = elements[(elements < 0) | (elements >= n_nodes)][0]
        raise TopologyError(
            f"element block at line {elem_line} references node {bad}, mesh has {n_nodes} nodes"
        )
    sets = _box_node_sets(nodes) if n_nodes else {}
    while pos < len(lines):
        parts, count = header("SET")
        ids = [v[0] for v in rows(count, 1, "set")]
        if any(i < 0 or i >= n_nodes for i in ids):
            raise TopologyError(f"set {parts[1]!r} references a node outside 0..{n_nodes - 1}")
        sets[parts[1]] = np.array(ids, dtype=np.int64)
    elements = _orient_tets(nodes, elements)
    return Mesh(nodes, elements, "tet4", sets)


def dump_tet_mesh(mesh: Mesh, sets: Iterable[str] | None = None) -> str:
    """Serialize a tet4 mesh in the format read by :func:`load_tet_mesh`."""
    if mesh.element_kind != "tet4":
        raise TopologyError("only tet4 meshes can be written in this format")
    out = [f"NODES {mesh.n_nodes}"]
    out += [" ".join(repr(float(c)) for c in xyz) for xyz in mesh.nodes]
    out.append(f"ELEMS {mesh.n_elements}")
    out += [" ".join(str(int(i)) for i in conn) for conn in mesh.elements]
    for name in sets if sets is not None else sorted(mesh.node_sets):
        ids = mesh.node_set(name)
        out.append(f"SET {name} {len(ids)}")
        out += [str(int(i)) for i in ids]
    return "\n".join(out) + "\n"


@dataclass(frozen=True, eq=False)
class DofMap:
    """Partition of the DOFs into prescribed (Dirichlet) and free sets."""

    n_nodes: int
    dofs_per_node: int
    prescribed_dofs: np.ndarray
    prescribed_values: np.ndarray
    free_dofs: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.dofs_per_node

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    @property
    def prescribed(self) -> dict:
        return {int(d): float(v) for d, v in zip(self.prescribed_dofs, self.prescribed_values)}

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.unique(self.prescribed_dofs // self.dofs_per_node)

    @property
    def n_db(self) -> int:
        """Number of distinct nodes carrying at least one prescribed DOF."""
        return len(self.dirichlet_nodes)

    def full_vector(self, free_values=None) -> np.ndarray:
        """Global DOF vector with prescribed values inserted."""
        U = np.zeros(self.n_dofs)
        if free_values is not None:
            U[self.free_dofs] = free_values
        U[self.prescribed_dofs] = self.prescribed_values
        return U


def build_dof_map(mesh: Mesh, dirichlet: Sequence[tuple] = ()) -> DofMap:
    """Collect Dirichlet entries ``(node_set_name, component, value)``.

    Later entries overwrite earlier ones on the same DOF.
    """
    d = mesh.dim
    prescribed = {}
    for name, component, value in dirichlet:
        component = int(component)
        if not 0 <= component < d:
            raise ValueError(f"component {component} out of range for a {d}D mesh")
        for node in mesh.node_set(name):
            prescribed[int(node) * d + component] = float(value)
    dofs = np.array(sorted(prescribed), dtype=np.int64)
    values = np.array([prescribed[k] for k in dofs], dtype=np.float64)
    free = np.setdiff1d(np.arange(mesh.n_nodes * d), dofs)
    for arr in (dofs, values, free):
        arr.setflags(write=False)
    return DofMap(mesh.n_nodes, d, dofs, values, free)
