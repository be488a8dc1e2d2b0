"""Compiled training kernels.

One call runs a sequence of mini-batch Adam steps on a flat parameter vector
(layout of :func:`folearn.neural.flatten`).  The arithmetic mirrors
:func:`folearn.neural.forward`, :func:`folearn.neural.backward`,
:func:`folearn.neural.adam_step` and the FEM energy loss; the tests check
each kernel against those reference routines.
"""
from __future__ import annotations

import math
import platform

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

ACT_CODES = {"swish": 0, "tanh": 1, "sigmoid": 2, "linear": 3}

# no "nnan"/"ninf": non-finite losses must stay detectable
_FM = {"nsz", "arcp", "contract", "afn", "reassoc"}


# Subnormal float32 intermediates (tiny gradients squared, saturated
# activations) slow the kernels several-fold on x86, so the training loops
# run with flush-to-zero and denormals-are-zero set and restore the control
# register afterwards.
_X86 = platform.machine().lower() in ("x86_64", "amd64")
_FTZ_DAZ = np.uint32(0x8040)


def _mxcsr_call(builder, name, ptr):
    fnty = ir.FunctionType(ir.VoidType(), [ir.IntType(8).as_pointer()])
    fn = cgutils.get_or_insert_function(builder.module, fnty, name)
    builder.call(fn, [builder.bitcast(ptr, ir.IntType(8).as_pointer())])


@intrinsic
def _get_mxcsr(typingctx):
    def codegen(context, builder, sig, args):
        ptr = cgutils.alloca_once(builder, ir.IntType(32))
        if _X86:
            _mxcsr_call(builder, "llvm.x86.sse.stmxcsr", ptr)
        else:
            builder.store(ir.Constant(ir.IntType(32), 0), ptr)
        return builder.load(ptr)
    return types.uint32(), codegen


@intrinsic
def _set_mxcsr(typingctx, val):
    def codegen(context, builder, sig, args):
        if _X86:
            _mxcsr_call(builder, "llvm.x86.sse.ldmxcsr", cgutils.alloca_once_value(builder, args[0]))
        return context.get_dummy_value()
    return types.void(types.uint32), codegen


@njit(cache=True)
def _scalar_like(arr, x):
    out = np.empty(1, arr.dtype)
    out[0] = x
    return out[0]


@njit(cache=True, fastmath=_FM)
def _activate(code, z):
    a = np.empty_like(z)
    da = np.empty_like(z)
    zf, af, df = z.ravel(), a.ravel(), da.ravel()
    for k in range(zf.size):
        x = zf[k]
        if code == 0:
            s = 0.5 * (1.0 + math.tanh(0.5 * x))
            af[k] = x * s
            df[k] = s + x * s * (1.0 - s)
        elif code == 1:
            t = math.tanh(x)
            af[k] = t
            df[k] = 1.0 - t * t
        elif code == 2:
            s = 0.5 * (1.0 + math.tanh(0.5 * x))
            af[k] = s
            df[k] = s * (1.0 - s)
        else:
            af[k] = x
            df[k] = 1.0
    return a, da


@njit(cache=True, fastmath=_FM)
def _adam_range(theta, m, v, off, g, scale, eps, b1, b2, c1, c2):
    T, M, V = theta[off:off + g.size], m[off:off + g.size], v[off:off + g.size]
    for k in range(g.size):
        gk = g[k]
        mk = b1 * M[k] + c1 * gk
        vk = b2 * V[k] + c2 * gk * gk
        M[k] = mk
        V[k] = vk
        T[k] -= scale * mk / (np.sqrt(vk) + eps)


@njit(cache=True, fastmath=_FM)
def _adam_outer(theta, m, v, off, d, h, scale, eps, b1, b2, c1, c2):
    # gradient block d^T h for a batch of one, never materialized
    n_o, n_i = d.size, h.size
    for o in range(n_o):
        do = d[o]
        base = off + o * n_i
        T, M, V = theta[base:base + n_i], m[base:base + n_i], v[base:base + n_i]
        for i in range(n_i):
            gk = do * h[i]
            mk = b1 * M[i] + c1 * gk
            vk = b2 * V[i] + c2 * gk * gk
            M[i] = mk
            V[i] = vk
            T[i] -= scale * mk / (np.sqrt(vk) + eps)


@njit(cache=True, fastmath=_FM)
def _fem_sample(y, E, Ke, use_cache, elem_nodes, elem_dofs, kbasis, free, fixed, fixed_vals,
                hard, weight, out_scale, n_dofs, dy, inv_b):
    """Energy and Dirichlet terms of one sample; writes ``dL/dy / B`` to ``dy``.

    The network output ``y`` is in units of ``out_scale``; ``inv_b`` already
    carries that factor.
    """
    U = np.zeros(n_dofs, y.dtype)
    if hard:
        for k in range(free.size):
            U[free[k]] = y[k] * out_scale
        for k in range(fixed.size):
            U[fixed[k]] = fixed_vals[k]
    else:
        for k in range(n_dofs):
            U[k] = y[k] * out_scale
    KU = np.zeros(n_dofs, y.dtype)
    n_el, s = elem_dofs.shape
    n_a = elem_nodes.shape[1]
    ke = np.empty((s, s), y.dtype)
    ue = np.empty(s, y.dtype)
    for e in range(n_el):
        if use_cache:
            ke[:, :] = Ke[e]
        else:
            ke[:, :] = 0.0
            for a in range(n_a):
                Ea = E[elem_nodes[e, a]]
                for i in range(s):
                    for j in range(s):
                        ke[i, j] += Ea * kbasis[e, a, i, j]
        for j in range(s):
            ue[j] = U[elem_dofs[e, j]]
        for i in range(s):
            acc = 0.0
            for j in range(s):
                acc += ke[i, j] * ue[j]
            KU[elem_dofs[e, i]] += acc
    energy = 0.0
    for k in range(n_dofs):
        energy += U[k] * KU[k]
    energy *= 0.5
    dirichlet = 0.0
    if hard:
        for k in range(free.size):
            dy[k] = KU[free[k]] * inv_b
    else:
        for k in range(fixed.size):
            diff = U[fixed[k]] - fixed_vals[k]
            dirichlet += abs(diff)
            sg = 1.0 if diff > 0 else (-1.0 if diff < 0 else 0.0)
            KU[fixed[k]] += weight * sg
        dirichlet *= weight
        for k in range(n_dofs):
            dy[k] = KU[k] * inv_b
    return energy, dirichlet


@njit(cache=True, fastmath=_FM)
def _mlp_forward(theta, sizes, acts, X):
    hs = [X]
    das = [X]
    h = X
    off = 0
    for l in range(sizes.size - 1):
        n_i, n_o = sizes[l], sizes[l + 1]
        W = theta[off:off + n_o * n_i].reshape((n_o, n_i))
        off += n_o * n_i
        b = theta[off:off + n_o]
        off += n_o
        z = np.dot(h, W.T) + b
        h, da = _activate(acts[l], z)
        hs.append(h)
        das.append(da)
    return hs, das


@njit(cache=True, fastmath=_FM)
def _mlp_backward_adam(theta, m, v, sizes, hs, das, dy, scale, eps, b1, b2, c1, c2):
    n_layers = sizes.size - 1
    offs = np.zeros(n_layers + 1, np.int64)
    for l in range(n_layers):
        offs[l + 1] = offs[l] + sizes[l + 1] * sizes[l] + sizes[l + 1]
    d = dy * das[n_layers]
    for l in range(n_layers - 1, -1, -1):
        n_i, n_o = sizes[l], sizes[l + 1]
        off = offs[l]
        h = hs[l]
        if l:
            W = theta[off:off + n_o * n_i].reshape((n_o, n_i))
            d_prev = np.dot(d, W) * das[l]
        if d.shape[0] == 1:
            _adam_outer(theta, m, v, off, d[0], h[0], scale, eps, b1, b2, c1, c2)
        else:
            G = np.dot(d.T, h)
            _adam_range(theta, m, v, off, G.ravel(), scale, eps, b1, b2, c1, c2)
        gb = np.zeros(n_o, d.dtype)
        for r in range(d.shape[0]):
            gb += d[r]
        _adam_range(theta, m, v, off + n_o * n_i, gb, scale, eps, b1, b2, c1, c2)
        if l:
            d = d_prev


@njit(cache=True, fastmath=_FM)
def _bank_forward(theta, sizes, acts, n_sub, X):
    B = X.shape[0]
    n0, n1 = sizes[0], sizes[1]
    W0 = theta[:n_sub * n1 * n0].reshape((n_sub * n1, n0))
    b0 = theta[n_sub * n1 * n0:n_sub * n1 * (n0 + 1)]
    z0 = np.dot(X, W0.T) + b0  # (B, S*n1)
    z = np.empty((n_sub, B, n1), X.dtype)
    for s in range(n_sub):
        for r in range(B):
            for o in range(n1):
                z[s, r, o] = z0[r, s * n1 + o]
    h, da = _activate(acts[0], z)
    hs = [h]
    das = [da]
    off = n_sub * n1 * (n0 + 1)
    for l in range(1, sizes.size - 1):
        n_i, n_o = sizes[l], sizes[l + 1]
        W = theta[off:off + n_sub * n_o * n_i].reshape((n_sub, n_o, n_i))
        off += n_sub * n_o * n_i
        b = theta[off:off + n_sub * n_o].reshape((n_sub, n_o))
        off += n_sub * n_o
        z = np.empty((n_sub, B, n_o), X.dtype)
        for s in range(n_sub):
            for r in range(B):
                for o in range(n_o):
                    acc = b[s, o]
                    for i in range(n_i):
                        acc += W[s, o, i] * h[s, r, i]
                    z[s, r, o] = acc
        h, da = _activate(acts[l], z)
        hs.append(h)
        das.append(da)
    return hs, das


@njit(cache=True, fastmath=_FM)
def _bank_backward(theta, sizes, n_sub, X, hs, das, dy, g):
    """Flat gradient of a subnet bank; ``dy`` has shape (B, n_sub)."""
    B = X.shape[0]
    n_layers = sizes.size - 1
    offs = np.zeros(n_layers + 1, np.int64)
    for l in range(n_layers):
        offs[l + 1] = offs[l] + n_sub * (sizes[l + 1] * sizes[l] + sizes[l + 1])
    d = np.empty((n_sub, B, 1), X.dtype)
    for s in range(n_sub):
        for r in range(B):
            d[s, r, 0] = dy[r, s] * das[n_layers - 1][s, r, 0]
    for l in range(n_layers - 1, 0, -1):
        n_i, n_o = sizes[l], sizes[l + 1]
        off = offs[l]
        W = theta[off:off + n_sub * n_o * n_i].reshape((n_sub, n_o, n_i))
        h = hs[l - 1]
        d_prev = np.zeros((n_sub, B, n_i), X.dtype)
        for s in range(n_sub):
            for o in range(n_o):
                gbias = 0.0
                for r in range(B):
                    dso = d[s, r, o]
                    gbias += dso
                    for i in range(n_i):
                        g[off + (s * n_o + o) * n_i + i] += dso * h[s, r, i]
                        d_prev[s, r, i] += dso * W[s, o, i]
                g[off + n_sub * n_o * n_i + s * n_o + o] = gbias
        d = d_prev * das[l - 1]
    n0, n1 = sizes[0], sizes[1]
    D = np.empty((B, n_sub * n1), X.dtype)
    for s in range(n_sub):
        for r in range(B):
            for o in range(n1):
                D[r, s * n1 + o] = d[s, r, o]
    G0 = np.dot(D.T, X)
    g[:n_sub * n1 * n0] = G0.ravel()
    for k in range(n_sub * n1):
        acc = 0.0
        for r in range(B):
            acc += D[r, k]
        g[n_sub * n1 * n0 + k] = acc


@njit(cache=True, fastmath=_FM)
def _batch_losses(y, idx, E, Ke, use_cache, elem_nodes, elem_dofs, kbasis, free, fixed,
                  fixed_vals, hard, weight, out_scale, energy_out, dirichlet_out):
    B = idx.size
    n_dofs = fixed_vals.size + free.size
    dy = np.empty((B, free.size if hard else n_dofs), y.dtype)
    inv_b = _scalar_like(y, out_scale / B)
    o = _scalar_like(y, out_scale)
    for r in range(B):
        sid = idx[r]
        en, di = _fem_sample(y[r], E[sid], Ke[sid if use_cache else 0], use_cache, elem_nodes,
                             elem_dofs, kbasis, free, fixed, fixed_vals, hard, weight, o,
                             n_dofs, dy[r], inv_b)
        energy_out[sid] = en
        dirichlet_out[sid] = di
        if not (math.isfinite(en) and math.isfinite(di)):
            return dy, sid
    return dy, -1


@njit(cache=True)
def _gather_rows(X, idx, dtype_like):
    Xb = np.empty((idx.size, X.shape[1]), dtype_like.dtype)
    for r in range(idx.size):
        Xb[r] = X[idx[r]]
    return Xb


@njit(cache=True)
def _train_mlp_impl(theta, m, v, step, sizes, acts, X, E, Ke, use_cache, batches,
                    elem_nodes, elem_dofs, kbasis, free, fixed, fixed_vals, hard, weight, out_scale,
                    lr, b1, b2, eps, energy_out, dirichlet_out):
    tb1, tb2 = _scalar_like(theta, b1), _scalar_like(theta, b2)
    tc1, tc2 = _scalar_like(theta, 1.0 - b1), _scalar_like(theta, 1.0 - b2)
    for bi in range(batches.shape[0]):
        idx = batches[bi]
        hs, das = _mlp_forward(theta, sizes, acts, _gather_rows(X, idx, theta))
        dy, bad = _batch_losses(hs[-1], idx, E, Ke, use_cache, elem_nodes, elem_dofs, kbasis,
                                free, fixed, fixed_vals, hard, weight, out_scale, energy_out, dirichlet_out)
        if bad >= 0:
            return step, bad
        step += 1
        c1 = 1.0 - b1 ** step
        c2 = 1.0 - b2 ** step
        scale = _scalar_like(theta, lr * math.sqrt(c2) / c1)
        eps_hat = _scalar_like(theta, eps * math.sqrt(c2))
        _mlp_backward_adam(theta, m, v, sizes, hs, das, dy, scale, eps_hat, tb1, tb2, tc1, tc2)
    return step, -1


@njit(cache=True)
def _train_bank_impl(theta, m, v, step, n_sub, sizes, acts, X, E, Ke, use_cache, batches,
                     elem_nodes, elem_dofs, kbasis, free, fixed, fixed_vals, hard, weight, out_scale,
                     lr, b1, b2, eps, energy_out, dirichlet_out):
    tb1, tb2 = _scalar_like(theta, b1), _scalar_like(theta, b2)
    tc1, tc2 = _scalar_like(theta, 1.0 - b1), _scalar_like(theta, 1.0 - b2)
    g = np.zeros(theta.size, theta.dtype)
    for bi in range(batches.shape[0]):
        idx = batches[bi]
        Xb = _gather_rows(X, idx, theta)
        hs, das = _bank_forward(theta, sizes, acts, n_sub, Xb)
        out = hs[-1]
        y = np.empty((idx.size, n_sub), theta.dtype)
        for r in range(idx.size):
            for s in range(n_sub):
                y[r, s] = out[s, r, 0]
        dy, bad = _batch_losses(y, idx, E, Ke, use_cache, elem_nodes, elem_dofs, kbasis,
                                free, fixed, fixed_vals, hard, weight, out_scale, energy_out, dirichlet_out)
        if bad >= 0:
            return step, bad
        step += 1
        c1 = 1.0 - b1 ** step
        c2 = 1.0 - b2 ** step
        scale = _scalar_like(theta, lr * math.sqrt(c2) / c1)
        eps_hat = _scalar_like(theta, eps * math.sqrt(c2))
        g[:] = 0.0
        _bank_backward(theta, sizes, n_sub, Xb, hs, das, dy, g)
        _adam_range(theta, m, v, 0, g, scale, eps_hat, tb1, tb2, tc1, tc2)
    return step, -1


@njit(cache=True)
def train_mlp(theta, m, v, step, sizes, acts, X, E, Ke, use_cache, batches,
              elem_nodes, elem_dofs, kbasis, free, fixed, fixed_vals, hard, weight, out_scale,
              lr, b1, b2, eps, energy_out, dirichlet_out):
    """Run one Adam step per row of ``batches`` (sample indices).

    Per-sample loss terms are written to ``energy_out``/``dirichlet_out``.
    Returns ``(step, bad)`` where ``bad`` is the first sample with a
    non-finite loss (training stops before updating on it) or -1.
    """
    old = _get_mxcsr()
    _set_mxcsr(old | _FTZ_DAZ)
    out = _train_mlp_impl(theta, m, v, step, sizes, acts, X, E, Ke, use_cache, batches,
                          elem_nodes, elem_dofs, kbasis, free, fixed, fixed_vals, hard, weight, out_scale,
                          lr, b1, b2, eps, energy_out, dirichlet_out)
    _set_mxcsr(old)
    return out


@njit(cache=True)
def train_bank(theta, m, v, step, n_sub, sizes, acts, X, E, Ke, use_cache, batches,
               elem_nodes, elem_dofs, kbasis, free, fixed, fixed_vals, hard, weight, out_scale,
               lr, b1, b2, eps, energy_out, dirichlet_out):
    """:func:`train_mlp` for a subnet bank with ``n_sub`` scalar subnets."""
    old = _get_mxcsr()
    _set_mxcsr(old | _FTZ_DAZ)
    out = _train_bank_impl(theta, m, v, step, n_sub, sizes, acts, X, E, Ke, use_cache, batches,
                           elem_nodes, elem_dofs, kbasis, free, fixed, fixed_vals, hard, weight, out_scale,
                           lr, b1, b2, eps, energy_out, dirichlet_out)
    _set_mxcsr(old)
    return out
