"""Young's modulus fields: random two-phase morphologies, Fourier fields,
resolution changes and a few hand-made test microstructures."""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, IllConditionedBasisError, InvalidMaterialError
from .mesh import Mesh, build_structured_grid
from .solver import SolutionField

DEFAULT_COEFF_RANGE = (-16.0, 18.0)


@dataclass(eq=False)
class ElasticityField:
    """Nodal Young's modulus (MPa) with a constant Poisson ratio."""

    mesh: Mesh
    E: np.ndarray
    nu: float = 0.3

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=np.float64)
        if self.E.shape != (self.mesh.n_nodes,):
            raise DimensionMismatchError(
                f"field has shape {self.E.shape}, mesh has {self.mesh.n_nodes} nodes")
        if not np.all(np.isfinite(self.E)) or np.any(self.E <= 0):
            raise InvalidMaterialError("Young's modulus must be finite and positive at every node")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Per-sample generator; seed and index are mixed by ``SeedSequence``."""
    return np.random.default_rng([int(seed), int(index)])


# --------------------------------------------------------------------------
# sample sets

@dataclass(eq=False)
class SampleSet:
    """A batch of training inputs.

    ``values`` holds one row per sample: nodal moduli for ``kind ==
    "nodal_E"`` or Fourier coefficients for ``kind == "fourier_coeffs"``.
    """

    values: np.ndarray
    kind: str
    seed: int
    ids: list = field(default_factory=list)
    phase_fraction: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if not self.ids:
            self.ids = [f"s{self.seed}_{i:06d}" for i in range(len(self.values))]

    def __len__(self):
        return len(self.values)

    def subset(self, index) -> "SampleSet":
        index = np.asarray(index)
        pf = None if self.phase_fraction is None else self.phase_fraction[index]
        return SampleSet(self.values[index], self.kind, self.seed,
                         [self.ids[i] for i in index], pf, dict(self.meta))

    def sorted_by_phase_fraction(self) -> "SampleSet":
        if self.phase_fraction is None:
            raise ValueError("sample set carries no phase fractions")
        return self.subset(np.argsort(self.phase_fraction, kind="stable"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.values.shape[1]
        if self.kind == "nodal_E":
            w.writerow(["id", "phase_fraction"] + [f"E_{i}" for i in range(n)])
            pf = self.phase_fraction if self.phase_fraction is not None else np.full(len(self), np.nan)
            for sid, f, row in zip(self.ids, pf, self.values):
                w.writerow([sid, repr(float(f))] + [repr(float(v)) for v in row])
        else:
            w.writerow(["id"] + [f"c_{i}" for i in range(n)])
            for sid, row in zip(self.ids, self.values):
                w.writerow([sid] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int = 0) -> "SampleSet":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty sample file")
        header, body = rows[0], rows[1:]
        ids = [r[0] for r in body]
        if len(header) > 1 and header[1] == "phase_fraction":
            pf = np.array([float(r[1]) for r in body])
            vals = np.array([[float(v) for v in r[2:]] for r in body])
            return cls(vals, "nodal_E", seed, ids, pf)
        if len(header) > 1 and header[1].startswith("c_"):
            vals = np.array([[float(v) for v in r[1:]] for r in body])
            return cls(vals, "fourier_coeffs", seed, ids)
        raise ValueError(f"unrecognized sample header {header[:3]}")


# --------------------------------------------------------------------------
# random two-phase morphologies

def smooth_random_field(points: np.ndarray, rng: np.random.Generator,
                        n_modes=(4, 8), wavelength=(0.35, 1.6)) -> np.ndarray:
    """Sum of 4-8 plane cosine waves with random direction, wavelength and phase."""
    k = int(rng.integers(n_modes[0], n_modes[1] + 1))
    angle = rng.uniform(0.0, 2 * np.pi, size=k)
    lam = rng.uniform(*wavelength, size=k)
    phase = rng.uniform(0.0, 2 * np.pi, size=k)
    dirs = np.column_stack([np.cos(angle), np.sin(angle)])
    if points.shape[1] == 3:
        dirs = np.column_stack([dirs, rng.uniform(-1, 1, size=k)])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    kvec = dirs * (2 * np.pi / lam)[:, None]
    return np.cos(points @ kvec.T + phase).sum(axis=1) / np.sqrt(k)


def two_phase_from_field(values, level, E_hard, E_soft) -> np.ndarray:
    """Hard phase wherever ``values > level``."""
    return np.where(np.asarray(values) > level, float(E_hard), float(E_soft))


def generate_two_phase_samples(n_samples: int, grid_n: int, E_hard: float = 1.0,
                               E_soft: float = 0.1, seed: int = 0) -> SampleSet:
    """Thresholded smooth random fields on an ``grid_n x grid_n`` grid.

    Each sample uses its own generator derived from ``(seed, index)`` so any
    subset can be regenerated independently.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not E_hard > E_soft > 0:
        raise InvalidMaterialError(f"need E_hard > E_soft > 0, got {E_hard}, {E_soft}")
    mesh = build_structured_grid(grid_n, 1.0)
    values = np.empty((n_samples, mesh.n_nodes))
    for i in range(n_samples):
        rng = sample_rng(seed, i)
        f = smooth_random_field(mesh.nodes, rng)
        level = rng.uniform(-0.8, 0.8) * f.std()
        values[i] = two_phase_from_field(f, level, E_hard, E_soft)
    pf = (values == E_hard).mean(axis=1)
    return SampleSet(values, "nodal_E", seed, phase_fraction=pf,
                     meta={"grid_n": grid_n, "E_hard": E_hard, "E_soft": E_soft})


# --------------------------------------------------------------------------
# resolution changes

def _grid_n(mesh: Mesh) -> int:
    if mesh.grid_shape is None or len(mesh.grid_shape) != 2:
        raise DimensionMismatchError("a structured 2D grid is required")
    return mesh.grid_shape[0]


def _side_length(mesh: Mesh) -> float:
    return float(mesh.nodes[:, 0].max())


def downsample(field: ElasticityField, target_n: int) -> ElasticityField:
    """Max-pool a fine structured field onto a coarser grid.

    Each coarse node takes the maximum over fine nodes within half a coarse
    spacing (Chebyshev distance), so thin hard features survive.
    """
    n_f = _grid_n(field.mesh)
    if target_n > n_f or target_n < 2:
        raise DimensionMismatchError(f"cannot pool a {n_f}-grid down to {target_n}")
    L = _side_length(field.mesh)
    coarse = build_structured_grid(target_n, L)
    h_f = L / (n_f - 1)
    ratio = (n_f - 1) / (target_n - 1)
    radius = h_f * ratio / 2 + 1e-9 * L
    if target_n == n_f:
        return ElasticityField(coarse, field.E.copy(), field.nu)
    E = np.empty(coarse.n_nodes)
    fine_xy = field.mesh.nodes
    for k, p in enumerate(coarse.nodes):
        mask = np.max(np.abs(fine_xy - p), axis=1) <= radius
        E[k] = field.E[mask].max()
    return ElasticityField(coarse, E, field.nu)


def interpolate_structured(mesh: Mesh, values, points) -> np.ndarray:
    """Bilinear interpolation of nodal ``values`` (n_nodes, ...) at ``points``."""
    n = _grid_n(mesh)
    L = _side_length(mesh)
    h = L / (n - 1)
    values = np.asarray(values, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    ij = np.clip(np.floor(points / h).astype(np.int64), 0, n - 2)
    xi = 2.0 * (points - ij * h) / h - 1.0
    # quad4 shape functions at every point, corners in counter-clockwise order
    x, e = xi[:, 0], xi[:, 1]
    N = 0.25 * np.stack([(1 - x) * (1 - e), (1 + x) * (1 - e), (1 + x) * (1 + e), (1 - x) * (1 + e)], axis=1)
    base = ij[:, 1] * n + ij[:, 0]
    corners = np.stack([base, base + 1, base + 1 + n, base + n], axis=1)
    return np.einsum("pa,pa...->p...", N, values[corners])


def upsample_bilinear(solution: SolutionField, target_n: int) -> SolutionField:
    """Interpolate every nodal component onto a finer structured grid."""
    n = _grid_n(solution.mesh)
    if target_n == n:
        return SolutionField(solution.mesh, solution.U.copy(), solution.stress.copy(),
                             None if solution.E is None else solution.E.copy())
    fine = build_structured_grid(target_n, _side_length(solution.mesh))
    disp = interpolate_structured(solution.mesh, solution.displacements, fine.nodes)
    stress = interpolate_structured(solution.mesh, solution.stress, fine.nodes)
    E = None if solution.E is None else interpolate_structured(solution.mesh, solution.E, fine.nodes)
    return SolutionField(fine, disp.ravel(), stress, E)


# --------------------------------------------------------------------------
# Fourier parameterization

@dataclass(eq=False)
class FourierSpec:
    """Coefficients of a sine/cosine expansion squashed into [E_min, E_max].

    ``layout="reduced"`` keeps the constant and the all-cosine products:
    ``[c, D_1, ..., D_P]`` with the frequency tuples enumerated by
    ``itertools.product(fx, fy[, fz])``.  ``layout="full"`` (2D only) is
    ``[c, A_1..A_P, B_1..B_P, C_1..C_P, D_1..D_P]``.
    """

    frequencies: tuple
    coeffs: np.ndarray
    beta: float = 1.0
    E_min: float = 0.1
    E_max: float = 1.0
    layout: str = "reduced"

    def __post_init__(self):
        self.frequencies = tuple(tuple(float(f) for f in axis) for axis in self.frequencies)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        expected = n_fourier_coeffs(self.frequencies, self.layout)
        if self.coeffs.shape != (expected,):
            raise DimensionMismatchError(
                f"{self.layout} layout needs {expected} coefficients, got {self.coeffs.shape}")
        if not self.E_min < self.E_max:
            raise InvalidMaterialError("E_min must be below E_max")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def with_coeffs(self, coeffs) -> "FourierSpec":
        return FourierSpec(self.frequencies, coeffs, self.beta, self.E_min, self.E_max, self.layout)


def n_fourier_coeffs(frequencies, layout="reduced") -> int:
    pairs = int(np.prod([len(f) for f in frequencies]))
    if layout == "reduced":
        return 1 + pairs
    if layout == "full":
        if len(frequencies) != 2:
            raise ValueError("the full layout is defined for 2D only")
        return 1 + 4 * pairs
    raise ValueError(f"unknown layout {layout!r}")


def fourier_basis(points, frequencies, layout="reduced") -> np.ndarray:
    """(n_points, M) matrix so that ``E_f = basis @ coeffs``."""
    points = np.asarray(points, dtype=np.float64)
    dim = len(frequencies)
    if points.shape[1] != dim:
        raise DimensionMismatchError(f"{dim} frequency axes for {points.shape[1]}D points")
    cols = [np.ones(len(points))]
    combos = list(itertools.product(*frequencies))
    if layout == "reduced":
        for f in combos:
            cols.append(np.prod([np.cos(f[a] * points[:, a]) for a in range(dim)], axis=0))
    else:
        n_fourier_coeffs(frequencies, layout)
        x, y = points[:, 0], points[:, 1]
        terms = [(np.sin, np.cos), (np.cos, np.sin), (np.sin, np.sin), (np.cos, np.cos)]
        for gx, gy in terms:
            for fx, fy in combos:
                cols.append(gx(fx * x) * gy(fy * y))
    return np.column_stack(cols)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def project_modulus(E_f, beta, E_min, E_max):
    return (E_max - E_min) * sigmoid(beta * (np.asarray(E_f) - 0.5)) + E_min


def fourier_values(spec: FourierSpec, points) -> np.ndarray:
    basis = fourier_basis(points, spec.frequencies, spec.layout)
    return project_modulus(basis @ spec.coeffs, spec.beta, spec.E_min, spec.E_max)


def fourier_field(spec: FourierSpec, mesh: Mesh, nu: float = 0.3) -> ElasticityField:
    """Evaluate the projected Fourier field at the mesh nodes."""
    return ElasticityField(mesh, fourier_values(spec, mesh.nodes), nu)


def sample_fourier_coeffs(n_samples: int, ranges=None, seed: int = 0, n_coeffs: int = 10) -> SampleSet:
    """Uniform coefficient draws, one ``(low, high)`` range per coefficient.

    ``ranges`` may be a single pair applied to every coefficient.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if ranges is None:
        ranges = [DEFAULT_COEFF_RANGE] * n_coeffs
    ranges = np.asarray(ranges, dtype=np.float64)
    if ranges.shape == (2,):
        ranges = np.tile(ranges, (n_coeffs, 1))
    if not np.all(np.isfinite(ranges)):
        raise ValueError("coefficient ranges must be finite")
    lo, hi = ranges[:, 0], ranges[:, 1]
    values = np.empty((n_samples, len(ranges)))
    for i in range(n_samples):
        values[i] = lo + (hi - lo) * sample_rng(seed, i).random(len(ranges))
    return SampleSet(values, "fourier_coeffs", seed, meta={"ranges": ranges.tolist()})


@dataclass
class FourierFit:
    coeffs: np.ndarray
    residual: float  # RMS of projected-field mismatch, MPa
    field: np.ndarray


def fit_fourier_coeffs(field: ElasticityField, template: FourierSpec, max_cond: float = 1e12) -> FourierFit:
    """Least-squares coefficients reproducing ``field`` through the projection.

    The target is the pre-projection value obtained by inverting the sigmoid
    on the modulus clamped 1e-6 (E_max - E_min) inside its bounds.
    """
    if not field.mesh.is_structured:
        raise DimensionMismatchError("fitting requires a structured grid")
    lo, hi, beta = template.E_min, template.E_max, template.beta
    eps = 1e-6 * (hi - lo)
    s = (np.clip(field.E, lo + eps, hi - eps) - lo) / (hi - lo)
    target = np.log(s / (1 - s)) / beta + 0.5
    A = fourier_basis(field.mesh.nodes, template.frequencies, template.layout)
    cond = np.linalg.cond(A.T @ A)
    if not cond <= max_cond:
        raise IllConditionedBasisError(f"normal-equation condition number {cond:.3e} exceeds {max_cond:.0e}")
    coeffs, *_ = np.linalg.lstsq(A, target, rcond=None)
    fitted = project_modulus(A @ coeffs, beta, lo, hi)
    residual = float(np.sqrt(np.mean((fitted - field.E) ** 2)))
    return FourierFit(coeffs, residual, fitted)


# --------------------------------------------------------------------------
# hand-made test microstructures (unseen by the random generator)

def _inside_ellipse(xy, center, radii, angle=0.0):
    c, s = np.cos(angle), np.sin(angle)
    d = xy - np.asarray(center)
    u = c * d[:, 0] + s * d[:, 1]
    v = -s * d[:, 0] + c * d[:, 1]
    return (u / radii[0]) ** 2 + (v / radii[1]) ** 2 <= 1.0 + 1e-12


def _inside_box(xy, lo, hi):
    return np.all((xy >= np.asarray(lo) - 1e-12) & (xy <= np.asarray(hi) + 1e-12), axis=1)


def inclusion_microstructure(mesh: Mesh, case: str, E_hard=1.0, E_soft=0.1) -> np.ndarray:
    """Nodal moduli of symmetric test geometries.

    ``"inclusions"``: a circular and an elliptical hard inclusion in a soft
    matrix.  ``"squares"``: three square hard inclusions.  ``"lattice"``: a
    hard frame with a soft cross-shaped core.
    """
    xy = mesh.nodes[:, :2] / _side_length(mesh)
    if case == "inclusions":
        hard = _inside_ellipse(xy, (0.3, 0.3), (0.2, 0.2)) | _inside_ellipse(
            xy, (0.7, 0.65), (0.25, 0.15), angle=np.pi / 4)
    elif case == "squares":
        hard = (_inside_box(xy, (0.1, 0.1), (0.4, 0.4)) | _inside_box(xy, (0.6, 0.1), (0.9, 0.4))
                | _inside_box(xy, (0.3, 0.6), (0.7, 0.9)))
    elif case == "lattice":
        core = _inside_box(xy, (0.4, 0.1), (0.6, 0.9)) | _inside_box(xy, (0.1, 0.4), (0.9, 0.6))
        hard = ~core
    else:
        raise ValueError(f"unknown test case {case!r}")
    return np.where(hard, float(E_hard), float(E_soft))


TEST_CASES = ("inclusions", "squares", "lattice")
