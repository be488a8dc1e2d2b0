"""Vanilla two-output DeepONet trained on FEM solutions (data-driven baseline).

The branch net reads the nodal moduli, the trunk net reads a coordinate.
Both end in ``2p`` neurons; the first halves give ``U = b[:p] . t[:p]`` and
the second halves give ``V = b[p:] . t[p:]``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neural
from .errors import ConfigError, DimensionMismatchError, NonFiniteLossError
from .mesh import Mesh
from .microstructure import ElasticityField, SampleSet
from .solver import SolutionField, recover_stress

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeepONetConfig:
    hidden: tuple = (20, 20, 20, 20, 20, 20)
    trunk_hidden: tuple = (20, 20, 20, 20, 20, 20)
    p: int = 10
    activation: str = "swish"
    batch_size: int = 100
    epochs: int = 4000
    lr: float = 5e-4
    nu: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "trunk_hidden", tuple(int(h) for h in self.trunk_hidden))
        if self.p < 1:
            raise ConfigError("p must be >= 1")
        if self.activation not in neural.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.batch_size < 1 or self.epochs < 0 or not self.lr > 0:
            raise ConfigError("batch_size >= 1, epochs >= 0 and lr > 0 are required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"], d["trunk_hidden"] = list(self.hidden), list(self.trunk_hidden)
        return d


@dataclass(frozen=True, eq=False)
class DeepONetParams:
    branch: neural.MlpParams
    trunk: neural.MlpParams
    p: int

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.branch.layer_sizes[-1] != 2 * self.p or self.trunk.layer_sizes[-1] != 2 * self.p:
            raise DimensionMismatchError(
                f"branch and trunk must end in 2p = {2 * self.p} neurons, got "
                f"{self.branch.layer_sizes[-1]} and {self.trunk.layer_sizes[-1]}")


def init_deeponet(n_sensors: int, dim: int = 2, config: DeepONetConfig = DeepONetConfig()) -> DeepONetParams:
    out = 2 * config.p
    branch = neural.init_params([n_sensors, *config.hidden, out], config.activation, config.seed)
    trunk = neural.init_params([dim, *config.trunk_hidden, out], config.activation, config.seed + 1)
    return DeepONetParams(branch, trunk, config.p)


def deeponet_eval(params: DeepONetParams, E_values, X):
    """``(U, V)`` for one or many modulus vectors at one or many points.

    ``E_values`` is (N,) or (B, N); ``X`` is (dim,) or (P, dim).  Results have
    shape (B, P) with singleton axes dropped to match the inputs.
    """
    E = np.asarray(E_values, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if E.shape[-1] != params.branch.layer_sizes[0]:
        raise DimensionMismatchError(f"branch expects {params.branch.layer_sizes[0]} values, got {E.shape[-1]}")
    if X.shape[-1] != params.trunk.layer_sizes[0]:
        raise DimensionMismatchError(f"trunk expects {params.trunk.layer_sizes[0]} coordinates, got {X.shape[-1]}")
    b, _ = neural.forward(params.branch, np.atleast_2d(E))
    t, _ = neural.forward(params.trunk, np.atleast_2d(X))
    p = params.p
    U = b[:, :p] @ t[:, :p].T
    V = b[:, p:] @ t[:, p:].T
    if X.ndim == 1:
        U, V = U[:, 0], V[:, 0]
    if E.ndim == 1:
        U, V = U[0], V[0]
    return U, V


def loss_and_grads(params: DeepONetParams, E, coords, U_true, V_true):
    """Mean squared error over samples and points, and its parameter gradients."""
    p = params.p
    b, tape_b = neural.forward(params.branch, E)
    t, tape_t = neural.forward(params.trunk, coords)
    rU = b[:, :p] @ t[:, :p].T - U_true
    rV = b[:, p:] @ t[:, p:].T - V_true
    scale = 1.0 / rU.size
    loss = scale * float(np.sum(rU * rU) + np.sum(rV * rV))
    gU, gV = 2 * scale * rU, 2 * scale * rV
    db = np.concatenate([gU @ t[:, :p], gV @ t[:, p:]], axis=1)
    dt = np.concatenate([gU.T @ b[:, :p], gV.T @ b[:, p:]], axis=1)
    grads = DeepONetParams(neural.backward(params.branch, tape_b, db),
                           neural.backward(params.trunk, tape_t, dt), p)
    return loss, grads


@dataclass(eq=False)
class DeepONetModel:
    config: DeepONetConfig
    mesh: Mesh
    params: DeepONetParams
    opt_branch: neural.AdamState
    opt_trunk: neural.AdamState
    rng_state: dict | None = None
    epochs_done: int = 0
    history: list = field(default_factory=list)


def init_model(mesh: Mesh, config: DeepONetConfig) -> DeepONetModel:
    params = init_deeponet(mesh.n_nodes, mesh.dim, config)
    rng = np.random.default_rng([config.seed, 2])
    return DeepONetModel(config, mesh, params, neural.adam_init(params.branch),
                         neural.adam_init(params.trunk), rng.bit_generator.state)


def _targets(mesh: Mesh, solutions):
    if isinstance(solutions, np.ndarray):
        U = solutions
    else:
        U = np.stack([s.U for s in solutions])
    if U.ndim != 2 or U.shape[1] != mesh.n_dofs:
        raise DimensionMismatchError(f"targets must be (n, {mesh.n_dofs}), got {U.shape}")
    return U[:, 0::mesh.dim], U[:, 1::mesh.dim]


def train_deeponet(samples: SampleSet, solutions, mesh: Mesh, config: DeepONetConfig,
                   model: DeepONetModel | None = None, epochs: int | None = None, callback=None):
    """Fit branch and trunk to FEM displacements with Adam.

    ``solutions`` is a list of :class:`SolutionField` or an (n, n_dofs) array
    aligned with ``samples``.  Returns ``(model, history)`` with one
    epoch-mean loss per epoch.
    """
    if mesh.dim != 2:
        raise DimensionMismatchError("the two-output DeepONet is defined for 2D meshes")
    E = np.asarray(samples.values, dtype=np.float64)
    if E.shape[1] != mesh.n_nodes:
        raise DimensionMismatchError(f"samples have {E.shape[1]} values, mesh has {mesh.n_nodes} nodes")
    U_all, V_all = _targets(mesh, solutions)
    if len(U_all) != len(E):
        raise DimensionMismatchError(f"{len(E)} samples but {len(U_all)} solutions")
    if model is None:
        model = init_model(mesh, config)
    config = model.config
    if config.batch_size > len(E):
        raise ConfigError(f"batch_size {config.batch_size} exceeds {len(E)} samples")
    epochs = config.epochs if epochs is None else epochs
    coords = mesh.nodes
    rng = np.random.default_rng()
    rng.bit_generator.state = model.rng_state
    n, B = len(E), config.batch_size
    full = (n // B) * B
    params, ob, ot = model.params, model.opt_branch, model.opt_trunk
    history = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        chunks = list(perm[:full].reshape(-1, B))
        if full < n:
            chunks.append(perm[full:])
        total = 0.0
        for idx in chunks:
            loss, g = loss_and_grads(params, E[idx], coords, U_all[idx], V_all[idx])
            if not np.isfinite(loss):
                sid = samples.ids[int(idx[0])]
                raise NonFiniteLossError(f"non-finite DeepONet loss in batch starting at sample {sid}",
                                         sample_id=sid, epoch=model.epochs_done + 1)
            branch, ob = neural.adam_step(params.branch, g.branch, ob, config.lr)
            trunk, ot = neural.adam_step(params.trunk, g.trunk, ot, config.lr)
            params = DeepONetParams(branch, trunk, params.p)
            total += loss * len(idx)
        history.append(total / n)
        model.epochs_done += 1
        if callback is not None:
            callback(model.epochs_done, history[-1])
    model.params, model.opt_branch, model.opt_trunk = params, ob, ot
    model.rng_state = rng.bit_generator.state
    model.history.extend(history)
    return model, history


def predict(model: DeepONetModel, E_values) -> SolutionField:
    """Nodal displacements at the mesh nodes and recovered stresses."""
    E = np.asarray(E_values, dtype=np.float64)
    U, V = deeponet_eval(model.params, E, model.mesh.nodes)
    disp = np.column_stack([U, V]).ravel()
    fld = ElasticityField(model.mesh, E, model.config.nu)
    return SolutionField(model.mesh, disp, recover_stress(model.mesh, fld, model.config.nu, disp), E.copy())
