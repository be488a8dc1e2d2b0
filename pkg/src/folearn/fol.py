"""Finite operator learning: networks trained on the discretized FEM energy.

A network maps an elasticity input (nodal moduli or Fourier coefficients)
to nodal displacements.  The loss for one sample is the strain energy
``0.5 U^T K(E) U`` of the predicted displacements plus, in ``soft_bc`` mode,
a weighted L1 mismatch on the Dirichlet DOFs.  In ``hard_bc`` mode the
network only predicts the free DOFs and the prescribed values are inserted
before the energy is evaluated.  No reference solutions are used.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine, neural
from .errors import ConfigError, DimensionMismatchError, NonFiniteLossError
from .fem import StiffnessOperator
from .mesh import DofMap, Mesh
from .microstructure import ElasticityField, FourierSpec, SampleSet, fourier_basis, project_modulus
from .solver import SolutionField, recover_stress

log = logging.getLogger(__name__)

DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class FolConfig:
    mode: str = "soft_bc"
    architecture: str = "subnet_bank"
    input_encoding: str = "nodal_E"
    hidden: tuple = (10, 10)
    activation: str = "swish"
    batch_size: int = 100
    epochs: int = 4000
    lr: float = 5e-4
    a_b: float = 10.0
    nu: float = 0.3
    seed: int = 0
    dtype: str = "float64"
    cache_element_matrices: bool = False
    output_scale: float | None = None
    normalize_inputs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        choices = {
            "mode": ("soft_bc", "hard_bc"),
            "architecture": ("subnet_bank", "single_net"),
            "input_encoding": ("nodal_E", "fourier_coeffs"),
            "activation": neural.ACTIVATIONS,
            "dtype": tuple(DTYPES),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.batch_size < 1 or self.epochs < 0 or not self.lr > 0:
            raise ConfigError("batch_size >= 1, epochs >= 0 and lr > 0 are required")
        if self.mode == "soft_bc" and not self.a_b > 0:
            raise ConfigError("soft_bc mode needs a positive boundary weight a_b")
        if self.output_scale is not None and not self.output_scale > 0:
            raise ConfigError("output_scale must be positive (or null for automatic)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass(frozen=True)
class LossBreakdown:
    energy_term: float
    dirichlet_term: float
    total: float


class FolProblem:
    """Mesh geometry and boundary data the loss needs, in flat arrays."""

    def __init__(self, mesh: Mesh, dof_map: DofMap, nu: float, mode: str = "soft_bc",
                 a_b: float = 10.0, dtype=np.float64, output_scale: float = 1.0):
        if dof_map.n_dofs != mesh.n_dofs:
            raise DimensionMismatchError("DOF map does not belong to this mesh")
        if mode not in ("soft_bc", "hard_bc"):
            raise ConfigError(f"unknown boundary mode {mode!r}")
        self.mesh, self.dof_map, self.mode = mesh, dof_map, mode
        self.dtype = np.dtype(dtype)
        self.operator = StiffnessOperator(mesh, nu)
        self.boundary_weight = a_b / dof_map.n_db if dof_map.n_db else 0.0
        self.n_out = dof_map.n_free if mode == "hard_bc" else mesh.n_dofs
        self.output_scale = float(output_scale)

    @property
    def hard(self) -> bool:
        return self.mode == "hard_bc"

    def full_U(self, y) -> np.ndarray:
        """(B, n_out) network outputs to (B, n_dofs) displacement vectors."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64)) * self.output_scale
        if not self.hard:
            return y
        U = np.zeros((len(y), self.mesh.n_dofs))
        U[:, self.dof_map.free_dofs] = y
        U[:, self.dof_map.prescribed_dofs] = self.dof_map.prescribed_values
        return U

    def loss_terms(self, E, U):
        """Energy and Dirichlet terms and ``dL/dU`` of one sample."""
        KU = self.operator.apply(E, U)
        energy = 0.5 * float(U @ KU)
        dU = KU.copy()
        fixed = self.dof_map.prescribed_dofs
        dirichlet = 0.0
        if self.hard:
            dU[fixed] = 0.0
        elif len(fixed):
            diff = U[fixed] - self.dof_map.prescribed_values
            dirichlet = self.boundary_weight * float(np.abs(diff).sum())
            dU[fixed] += self.boundary_weight * np.sign(diff)
        return energy, dirichlet, dU

    def kernel_args(self):
        """Geometry arrays in the order the compiled kernels expect."""
        dm = self.dof_map
        return (self.mesh.elements.astype(np.int64), self.operator.element_dofs.astype(np.int64),
                self.operator.kbasis.astype(self.dtype), dm.free_dofs.astype(np.int64),
                dm.prescribed_dofs.astype(np.int64), dm.prescribed_values.astype(self.dtype),
                self.hard, self.boundary_weight, self.output_scale)


def fol_loss(mesh: Mesh, dof_map: DofMap, field: ElasticityField, U_pred, config: FolConfig,
             problem: FolProblem | None = None):
    """Loss of one predicted displacement vector and its gradient ``dL/dU``.

    In ``hard_bc`` mode the prescribed entries of ``U_pred`` are overwritten
    first and the returned gradient is zero on them.
    """
    U = np.array(U_pred, dtype=np.float64)
    if U.shape != (mesh.n_dofs,):
        raise DimensionMismatchError(f"expected {mesh.n_dofs} DOFs, got {U.shape}")
    if config.mode == "hard_bc":
        U[dof_map.prescribed_dofs] = dof_map.prescribed_values
    if problem is None:
        problem = FolProblem(mesh, dof_map, field.nu, config.mode, config.a_b)
    energy, dirichlet, dU = problem.loss_terms(field.E, U)
    return LossBreakdown(energy, dirichlet, energy + dirichlet), dU


def batch_loss_and_grads(model: "FolModel", X, E, problem: FolProblem | None = None):
    """Reference (uncompiled) mean loss and parameter gradients over a batch."""
    if problem is None:
        problem = model_problem(model)
    X = np.atleast_2d(X)
    E = np.atleast_2d(E)
    y, tape = neural.forward(model.params, network_inputs(model, X))
    U = problem.full_U(y)
    total, dy = 0.0, np.empty_like(np.asarray(y, dtype=np.float64))
    for r in range(len(X)):
        en, di, dU = problem.loss_terms(E[r], U[r])
        total += en + di
        dy[r] = dU[model.dof_map.free_dofs] if problem.hard else dU
    B = len(X)
    return total / B, neural.backward(model.params, tape, dy * (problem.output_scale / B))


# --------------------------------------------------------------------------
# model


@dataclass(eq=False)
class FolModel:
    config: FolConfig
    mesh: Mesh
    dof_map: DofMap
    params: neural.MlpParams
    opt_state: neural.AdamState
    fourier: FourierSpec | None = None
    rng_state: dict | None = None
    epochs_done: int = 0
    history: list = field(default_factory=list)
    output_scale: float = 1.0
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @property
    def n_inputs(self) -> int:
        return self.params.layer_sizes[0]


def resolve_output_scale(config: FolConfig, dof_map: DofMap) -> float:
    """Characteristic displacement; defaults to the largest prescribed value."""
    if config.output_scale is not None:
        return float(config.output_scale)
    peak = float(np.abs(dof_map.prescribed_values).max()) if len(dof_map.prescribed_values) else 0.0
    return peak if peak > 0 else 1.0


def input_normalization(X):
    """Affine map of each feature's observed range onto [-1, 1]."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    lo, hi = X.min(axis=0), X.max(axis=0)
    half = 0.5 * (hi - lo)
    return 0.5 * (hi + lo), np.where(half > 0, half, 1.0)


def network_inputs(model: "FolModel", X):
    X = np.asarray(X, dtype=np.float64)
    if model.input_shift is None:
        return X
    return (X - model.input_shift) / model.input_scale


def model_problem(model: "FolModel", dtype=np.float64) -> "FolProblem":
    cfg = model.config
    return FolProblem(model.mesh, model.dof_map, cfg.nu, cfg.mode, cfg.a_b, dtype, model.output_scale)


def _network_sizes(config: FolConfig, n_in: int, n_out: int):
    return [n_in, *config.hidden, n_out]


def init_model(mesh: Mesh, dof_map: DofMap, config: FolConfig, n_inputs: int,
               fourier: FourierSpec | None = None, inputs=None) -> FolModel:
    """Fresh model; ``inputs`` (training inputs) set the normalization if enabled."""
    dtype = DTYPES[config.dtype]
    n_out = dof_map.n_free if config.mode == "hard_bc" else mesh.n_dofs
    if n_out == 0:
        raise ConfigError("hard_bc with every DOF prescribed leaves nothing to learn")
    if config.input_encoding == "fourier_coeffs" and fourier is None:
        raise ConfigError("fourier_coeffs encoding needs a FourierSpec template")
    if config.architecture == "subnet_bank":
        params = neural.init_subnet_bank(n_out, [n_inputs, *config.hidden, 1], config.activation,
                                         config.seed, dtype)
    else:
        params = neural.init_params(_network_sizes(config, n_inputs, n_out), config.activation,
                                    config.seed, dtype=dtype)
    shift = scale = None
    if config.normalize_inputs:
        if inputs is None:
            raise ConfigError("normalize_inputs needs the training inputs to fix the input range")
        shift, scale = input_normalization(inputs)
        if shift.size != n_inputs:
            raise DimensionMismatchError(f"normalization has {shift.size} features, model {n_inputs}")
    rng = np.random.default_rng([config.seed, 1])
    return FolModel(config, mesh, dof_map, params, neural.adam_init(params), fourier,
                    rng.bit_generator.state, output_scale=resolve_output_scale(config, dof_map),
                    input_shift=shift, input_scale=scale)


def encode_samples(samples: SampleSet, mesh: Mesh, config: FolConfig, fourier: FourierSpec | None):
    """Network inputs and nodal moduli for every sample."""
    X = np.asarray(samples.values, dtype=np.float64)
    if config.input_encoding == "nodal_E":
        if X.shape[1] != mesh.n_nodes:
            raise DimensionMismatchError(f"samples have {X.shape[1]} values, mesh has {mesh.n_nodes} nodes")
        return X, X
    basis = fourier_basis(mesh.nodes, fourier.frequencies, fourier.layout)
    if X.shape[1] != basis.shape[1]:
        raise DimensionMismatchError(f"samples have {X.shape[1]} coefficients, layout needs {basis.shape[1]}")
    E = project_modulus(X @ basis.T, fourier.beta, fourier.E_min, fourier.E_max)
    return X, E


class _Runner:
    """Binds a model's flat state and the problem arrays to the compiled kernels."""

    def __init__(self, model: FolModel, problem: FolProblem, X, E):
        cfg = model.config
        dtype = problem.dtype
        self.model = model
        self.bank = isinstance(model.params, neural.SubnetBank)
        self.theta = neural.flatten(model.params).astype(dtype)
        self.m = model.opt_state.m.astype(dtype)
        self.v = model.opt_state.v.astype(dtype)
        self.step = int(model.opt_state.step)
        self.sizes = np.array(model.params.layer_sizes, dtype=np.int64)
        self.acts = np.array([engine.ACT_CODES[a] for a in model.params.activations], dtype=np.int64)
        self.X = np.ascontiguousarray(network_inputs(model, X), dtype=dtype)
        self.E = np.ascontiguousarray(E, dtype=dtype)
        cached = cfg.cache_element_matrices
        self.Ke = (np.stack([problem.operator.element_matrices(e) for e in E]).astype(dtype)
                   if cached else np.zeros((1, 1, 1, 1), dtype))
        self.cached = cached
        self.geometry = problem.kernel_args()
        self.hyper = (float(cfg.lr), model.opt_state.b1, model.opt_state.b2, model.opt_state.eps)

    def run(self, batches, energy, dirichlet) -> int:
        batches = np.ascontiguousarray(batches, dtype=np.int64)
        common = (self.X, self.E, self.Ke, self.cached, batches, *self.geometry, *self.hyper,
                  energy, dirichlet)
        if self.bank:
            self.step, bad = engine.train_bank(self.theta, self.m, self.v, self.step,
                                               self.model.params.n_subnets,
                                               self.sizes, self.acts, *common)
        else:
            self.step, bad = engine.train_mlp(self.theta, self.m, self.v, self.step,
                                              self.sizes, self.acts, *common)
        return int(bad)

    def store(self):
        st = self.model.opt_state
        self.model.params = neural.unflatten(self.model.params, self.theta)
        self.model.opt_state = neural.AdamState(self.m.copy(), self.v.copy(), self.step,
                                                st.b1, st.b2, st.eps)


def train_fol(samples: SampleSet, mesh: Mesh, dof_map: DofMap, config: FolConfig,
              fourier: FourierSpec | None = None, model: FolModel | None = None,
              epochs: int | None = None, callback=None):
    """Train (or continue training) a FOL model.

    Per epoch the samples are shuffled with the model's generator, split in
    mini-batches, and one Adam step is taken per batch using the mean
    gradient over the batch; a trailing partial batch gets its own step.
    Returns ``(model, history)`` where history holds one epoch-mean
    :class:`LossBreakdown` per epoch run in this call.
    """
    if len(samples) == 0:
        raise ValueError("no training samples")
    if model is None:
        n_in = samples.values.shape[1]
        model = init_model(mesh, dof_map, config, n_in, fourier, inputs=samples.values)
    elif not (model.mesh.same_as(mesh) and model.dof_map.n_dofs == dof_map.n_dofs):
        raise DimensionMismatchError("model was built for a different mesh")
    config = model.config
    if config.batch_size > len(samples):
        raise ConfigError(f"batch_size {config.batch_size} exceeds {len(samples)} samples")
    epochs = config.epochs if epochs is None else epochs
    X, E = encode_samples(samples, mesh, config, model.fourier)
    if X.shape[1] != model.n_inputs:
        raise DimensionMismatchError(f"model expects {model.n_inputs} inputs, samples have {X.shape[1]}")
    problem = model_problem(model, DTYPES[config.dtype])
    runner = _Runner(model, problem, X, E)

    rng = np.random.default_rng()
    rng.bit_generator.state = model.rng_state
    n, B = len(samples), config.batch_size
    full = (n // B) * B
    history = []
    energies = np.zeros(n, problem.dtype)
    dirichlets = np.zeros(n, problem.dtype)
    t0 = time.perf_counter()
    for _ in range(epochs):
        perm = rng.permutation(n)
        chunks = [perm[:full].reshape(-1, B)]
        if full < n:
            chunks.append(perm[full:].reshape(1, -1))
        for chunk in chunks:
            bad = runner.run(chunk, energies, dirichlets)
            if bad >= 0:
                raise NonFiniteLossError(
                    f"non-finite loss for sample {samples.ids[bad]} in epoch {model.epochs_done + 1}",
                    sample_id=samples.ids[bad], epoch=model.epochs_done + 1)
        en, di = float(energies.mean(dtype=np.float64)), float(dirichlets.mean(dtype=np.float64))
        record = LossBreakdown(en, di, en + di)
        history.append(record)
        model.epochs_done += 1
        if callback is not None:
            callback(model.epochs_done, record)
    runner.store()
    model.rng_state = rng.bit_generator.state
    model.history.extend(history)
    log.info("trained %d epochs in %.1f s", epochs, time.perf_counter() - t0)
    return model, history


def predict_displacements(model: FolModel, inputs) -> np.ndarray:
    """(n_inputs, n_dofs) displacement vectors; prescribed DOFs exact in hard mode."""
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if X.shape[1] != model.n_inputs:
        raise DimensionMismatchError(f"model expects {model.n_inputs} inputs, got {X.shape[1]}")
    y, _ = neural.forward(model.params, network_inputs(model, X).astype(model.params.dtype))
    y = np.asarray(y, dtype=np.float64) * model.output_scale
    if model.config.mode == "soft_bc":
        return y
    U = np.zeros((len(X), model.mesh.n_dofs))
    U[:, model.dof_map.free_dofs] = y
    U[:, model.dof_map.prescribed_dofs] = model.dof_map.prescribed_values
    return U


def input_field(model: FolModel, x) -> ElasticityField:
    x = np.asarray(x, dtype=np.float64)
    if model.config.input_encoding == "nodal_E":
        return ElasticityField(model.mesh, x, model.config.nu)
    basis = fourier_basis(model.mesh.nodes, model.fourier.frequencies, model.fourier.layout)
    f = model.fourier
    return ElasticityField(model.mesh, project_modulus(basis @ x, f.beta, f.E_min, f.E_max), model.config.nu)


def predict(model: FolModel, x) -> SolutionField:
    """Displacements and recovered nodal stresses for one input vector."""
    U = predict_displacements(model, x)[0]
    fld = input_field(model, x)
    stress = recover_stress(model.mesh, fld, model.config.nu, U)
    return SolutionField(model.mesh, U, stress, fld.E)
