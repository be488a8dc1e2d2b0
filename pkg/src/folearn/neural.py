"""Feed-forward networks with hand-written reverse mode and Adam.

Weights follow ``z_m = a(sum_n W[m, n] h_n + b_m)``, so ``W`` has shape
(fan_out, fan_in).  Inputs may be a single vector or a (batch, features)
array; ``backward`` sums parameter gradients over the batch.

The functions here are the readable reference implementation.  The training
loops in :mod:`folearn.engine` run the same arithmetic on a flat parameter
vector whose layout is given by :func:`flatten`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatchError, StaleTapeError

ACTIVATIONS = ("swish", "tanh", "sigmoid", "linear")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def activate(name: str, z):
    """Return ``(a(z), a'(z))``."""
    if name == "swish":
        s = _sigmoid(z)
        return z * s, s + z * s * (1.0 - s)
    if name == "tanh":
        t = np.tanh(z)
        return t, 1.0 - t * t
    if name == "sigmoid":
        s = _sigmoid(z)
        return s, s * (1.0 - s)
    if name == "linear":
        return z, np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True, eq=False)
class MlpParams:
    weights: tuple
    biases: tuple
    activations: tuple

    @property
    def layer_sizes(self) -> tuple:
        return (int(self.weights[0].shape[-1]),) + tuple(int(w.shape[-2]) for w in self.weights)

    @property
    def n_params(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    @property
    def dtype(self):
        return self.weights[0].dtype

    def replace(self, weights, biases):
        return type(self)(tuple(weights), tuple(biases), self.activations)


@dataclass(frozen=True, eq=False)
class SubnetBank(MlpParams):
    """Independent scalar-output subnets that all read the same input.

    Weights are stacked along a leading subnet axis: ``W[l]`` has shape
    (n_subnets, fan_out, fan_in).
    """

    @property
    def n_subnets(self) -> int:
        return int(self.weights[0].shape[0])

    def subnet(self, i: int) -> MlpParams:
        return MlpParams(tuple(w[i] for w in self.weights), tuple(b[i] for b in self.biases),
                         self.activations)


class Tape(NamedTuple):
    inputs: tuple   # input to each layer, batched
    pre: tuple      # pre-activation of each layer
    squeeze: bool   # forward received a single vector


def _glorot(rng, shape):
    fan_out, fan_in = shape[-2], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _activation_list(n_layers, activation, final_activation):
    for name in (activation, final_activation):
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
    return tuple([activation] * (n_layers - 1) + [final_activation])


def init_params(layer_sizes: Sequence[int], activation: str = "swish", seed: int = 0,
                final_activation: str = "linear", dtype=np.float64) -> MlpParams:
    """Glorot-uniform weights and zero biases."""
    if len(layer_sizes) < 2 or min(layer_sizes) < 1:
        raise ValueError(f"invalid layer sizes {list(layer_sizes)}")
    acts = _activation_list(len(layer_sizes) - 1, activation, final_activation)
    rng = np.random.default_rng(seed)
    pairs = list(zip(layer_sizes[:-1], layer_sizes[1:]))
    weights = tuple(_glorot(rng, (o, i)).astype(dtype) for i, o in pairs)
    biases = tuple(np.zeros(o, dtype) for _, o in pairs)
    return MlpParams(weights, biases, acts)


def init_subnet_bank(n_subnets: int, layer_sizes: Sequence[int], activation: str = "swish",
                     seed: int = 0, dtype=np.float64) -> SubnetBank:
    """``n_subnets`` scalar-output networks ``layer_sizes[0] -> ... -> 1``."""
    sizes = list(layer_sizes)
    if sizes[-1] != 1:
        sizes.append(1)
    if n_subnets < 1 or min(sizes) < 1:
        raise ValueError(f"invalid subnet bank {n_subnets} x {sizes}")
    acts = _activation_list(len(sizes) - 1, activation, "linear")
    rng = np.random.default_rng(seed)
    pairs = list(zip(sizes[:-1], sizes[1:]))
    weights = tuple(_glorot(rng, (n_subnets, o, i)).astype(dtype) for i, o in pairs)
    biases = tuple(np.zeros((n_subnets, o), dtype) for _, o in pairs)
    return SubnetBank(weights, biases, acts)


def forward(params: MlpParams, x):
    """Evaluate the network; returns ``(y, tape)``.

    For a :class:`SubnetBank` the output has one column per subnet.
    """
    x = np.asarray(x, dtype=params.dtype)
    n_in = params.layer_sizes[0]
    if x.shape[-1] != n_in:
        raise DimensionMismatchError(f"network expects {n_in} inputs, got {x.shape[-1]}")
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    bank = isinstance(params, SubnetBank)
    inputs, pre = [], []
    for l, (W, b, act) in enumerate(zip(params.weights, params.biases, params.activations)):
        inputs.append(h)
        if not bank:
            z = h @ W.T + b
        elif l == 0:
            z = np.einsum("bi,soi->bso", h, W) + b
        else:
            z = np.einsum("bsi,soi->bso", h, W) + b
        pre.append(z)
        h, _ = activate(act, z)
    y = h[..., 0] if bank else h
    return (y[0] if squeeze else y), Tape(tuple(inputs), tuple(pre), squeeze)


def backward(params: MlpParams, tape: Tape, dL_dy):
    """Parameter gradients given the loss gradient at the outputs.

    Returns a params-shaped object; batch contributions are summed.
    """
    if len(tape.pre) != len(params.weights) or any(
        z.shape[-1] != W.shape[-2] for z, W in zip(tape.pre, params.weights)
    ):
        raise StaleTapeError("tape does not match the network it is used with")
    d = np.asarray(dL_dy, dtype=params.dtype)
    if tape.squeeze:
        d = d[None]
    bank = isinstance(params, SubnetBank)
    if bank:
        d = d[..., None]
    if d.shape != tape.pre[-1].shape:
        raise StaleTapeError(f"output gradient {d.shape} does not match tape {tape.pre[-1].shape}")
    n = len(params.weights)
    gW, gb = [None] * n, [None] * n
    for l in range(n - 1, -1, -1):
        _, da = activate(params.activations[l], tape.pre[l])
        d = d * da
        h = tape.inputs[l]
        W = params.weights[l]
        gb[l] = d.sum(axis=0)
        if not bank:
            gW[l] = d.T @ h
            if l:
                d = d @ W
        else:
            gW[l] = np.einsum("bso,bi->soi", d, h) if l == 0 else np.einsum("bso,bsi->soi", d, h)
            if l:
                d = np.einsum("bso,soi->bsi", d, W)
    return params.replace(gW, gb)


def input_gradient(params: MlpParams, tape: Tape, dL_dy):
    """Gradient of the loss with respect to the network input (plain MLP only)."""
    d = np.asarray(dL_dy, dtype=params.dtype)
    d = d[None] if tape.squeeze else d
    for l in range(len(params.weights) - 1, -1, -1):
        _, da = activate(params.activations[l], tape.pre[l])
        d = (d * da) @ params.weights[l]
    return d[0] if tape.squeeze else d


# --------------------------------------------------------------------------
# flat layout


def flatten(params: MlpParams) -> np.ndarray:
    """All parameters in one vector: per layer, ``W.ravel()`` then ``b.ravel()``."""
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts += [W.ravel(), b.ravel()]
    return np.concatenate(parts)


def unflatten(template: MlpParams, theta) -> MlpParams:
    theta = np.asarray(theta)
    if theta.size != template.n_params:
        raise DimensionMismatchError(f"expected {template.n_params} parameters, got {theta.size}")
    weights, biases, k = [], [], 0
    for W, b in zip(template.weights, template.biases):
        weights.append(theta[k:k + W.size].reshape(W.shape).copy())
        k += W.size
        biases.append(theta[k:k + b.size].reshape(b.shape).copy())
        k += b.size
    return template.replace(weights, biases)


# --------------------------------------------------------------------------
# Adam


@dataclass(eq=False)
class AdamState:
    """Moment estimates over the flat parameter layout."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8


def adam_init(params: MlpParams, b1=0.9, b2=0.999, eps=1e-8) -> AdamState:
    n = params.n_params
    return AdamState(np.zeros(n, params.dtype), np.zeros(n, params.dtype), 0, b1, b2, eps)


def adam_coefficients(step: int, lr: float, b1: float, b2: float, eps: float):
    """Bias correction folded into a step size and a rescaled epsilon."""
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    return lr * np.sqrt(c2) / c1, eps * np.sqrt(c2)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    g = flatten(grads)
    theta = flatten(params)
    dt = theta.dtype.type
    m = dt(state.b1) * state.m + dt(1 - state.b1) * g
    v = dt(state.b2) * state.v + dt(1 - state.b2) * g * g
    step = state.step + 1
    scale, eps_hat = adam_coefficients(step, lr, state.b1, state.b2, state.eps)
    theta = theta - dt(scale) * m / (np.sqrt(v) + dt(eps_hat))
    return unflatten(params, theta), AdamState(m, v, step, state.b1, state.b2, state.eps)


def cast(params: MlpParams, dtype) -> MlpParams:
    return params.replace([w.astype(dtype) for w in params.weights],
                          [b.astype(dtype) for b in params.biases])
