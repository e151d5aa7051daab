"""Compiled inner loops: multilinear interpolation and counter-based uniforms.

Uniforms are a pure function of ``(seed, key...)`` so that any partition of
the work across chunks or threads reproduces the same numbers bit for bit.
"""

import math

import numpy as np
from numba import njit, prange

# Grid coordinates within this distance of an integer snap onto the node.
SNAP = 1e-10

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True)
def uniform_from_key(seed, k0, k1, k2, k3, k4):
    h = splitmix64(seed)
    h = splitmix64(h ^ k0)
    h = splitmix64(h ^ k1)
    h = splitmix64(h ^ k2)
    h = splitmix64(h ^ k3)
    h = splitmix64(h ^ k4)
    return float(h >> _S11) * _INV53


@njit(cache=True, parallel=True)
def hash_uniforms(seed, keys):
    """One uniform in [0, 1) per row of the ``(n, 5)`` uint64 key array."""
    n = keys.shape[0]
    out = np.empty(n)
    for i in prange(n):
        out[i] = uniform_from_key(seed, keys[i, 0], keys[i, 1], keys[i, 2], keys[i, 3], keys[i, 4])
    return out


@njit(cache=True)
def _locate(x, lower, inv_step, res, base, frac):
    d = x.shape[0]
    for k in range(d):
        hi = res[k] - 1
        u = (x[k] - lower[k]) * inv_step[k]
        if u <= 0.0:
            u = 0.0
        elif u >= hi:
            u = float(hi)
        r = math.floor(u + 0.5)
        if abs(u - r) <= SNAP:
            u = r
        b = int(math.floor(u))
        if b > hi - 1:
            b = hi - 1
        base[k] = b
        frac[k] = u - b


@njit(cache=True)
def _corners(x, lower, inv_step, res, strides, base, frac, idx, wts):
    """Fill the nonzero corner nodes and weights of ``x``; returns how many there are."""
    _locate(x, lower, inv_step, res, base, frac)
    m = 1
    idx[0] = 0
    wts[0] = 1.0
    for k in range(x.shape[0]):
        f = frac[k]
        lo = base[k] * strides[k]
        if f == 0.0:
            for c in range(m):
                idx[c] += lo
        elif f == 1.0:
            for c in range(m):
                idx[c] += lo + strides[k]
        else:
            for c in range(m):
                idx[c + m] = idx[c] + lo + strides[k]
                wts[c + m] = wts[c] * f
                idx[c] += lo
                wts[c] *= 1.0 - f
            m *= 2
    return m


@njit(cache=True)
def interp_one(x, lower, inv_step, res, strides, table, self_node, out, base, frac, idx, wts):
    """Interpolate every column of ``table`` at ``x`` into ``out``.

    Returns the weight that node ``self_node`` receives (0 if it is not a corner).
    ``idx`` and ``wts`` are scratch arrays of length ``2**d``.
    """
    n_cols = table.shape[1]
    m = _corners(x, lower, inv_step, res, strides, base, frac, idx, wts)
    for j in range(n_cols):
        out[j] = 0.0
    w_self = 0.0
    for c in range(m):
        w = wts[c]
        node = idx[c]
        for j in range(n_cols):
            out[j] += w * table[node, j]
        if node == self_node:
            w_self += w
    return w_self


_BLOCK = 1024


@njit(cache=True, parallel=True)
def interpolate_rows(points, lower, inv_step, res, strides, table, self_nodes):
    n, d = points.shape
    out = np.empty((n, table.shape[1]))
    w_self = np.empty(n)
    for blk in prange((n + _BLOCK - 1) // _BLOCK):
        base = np.empty(d, np.int64)
        frac = np.empty(d)
        idx = np.empty(1 << d, np.int64)
        wts = np.empty(1 << d)
        for i in range(blk * _BLOCK, min(n, (blk + 1) * _BLOCK)):
            w_self[i] = interp_one(points[i], lower, inv_step, res, strides, table,
                                   self_nodes[i], out[i], base, frac, idx, wts)
    return out, w_self


@njit(cache=True, parallel=True)
def continuation_terms(points, live, nodes, actions, lower, inv_step, res, strides, table,
                       cont, cont_prime, cont_repeat):
    """Add ``live[i]`` times the three continuation values of draw ``i`` into the outputs.

    With ``q`` the interpolated row at the draw and ``w`` the weight of the
    source node: ``max_b q[b]``, ``max_b (q[b] - w (Q[z,b] - Q[z,a]))`` and ``q[a]``.
    """
    n, d = points.shape
    n_cols = table.shape[1]
    for blk in prange((n + _BLOCK - 1) // _BLOCK):
        base = np.empty(d, np.int64)
        frac = np.empty(d)
        idx = np.empty(1 << d, np.int64)
        wts = np.empty(1 << d)
        q = np.empty(n_cols)
        for i in range(blk * _BLOCK, min(n, (blk + 1) * _BLOCK)):
            if live[i] == 0.0:
                continue
            z = nodes[i]
            a = actions[i]
            w = interp_one(points[i], lower, inv_step, res, strides, table, z, q, base, frac,
                           idx, wts)
            qa = table[z, a]
            best = q[0]
            best_prime = q[0] - w * (table[z, 0] - qa)
            for b in range(1, n_cols):
                if q[b] > best:
                    best = q[b]
                v = q[b] - w * (table[z, b] - qa)
                if v > best_prime:
                    best_prime = v
            cont[i] += live[i] * best
            cont_prime[i] += live[i] * best_prime
            cont_repeat[i] += live[i] * q[a]


@njit(cache=True)
def corner_weights(points, lower, inv_step, res, strides):
    """Dense ``(n, 2**d)`` corner indices and weights (zero weights included)."""
    n, d = points.shape
    m = 1 << d
    idx = np.empty((n, m), np.int64)
    wts = np.empty((n, m))
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    for i in range(n):
        _locate(points[i], lower, inv_step, res, base, frac)
        for c in range(m):
            w = 1.0
            node = 0
            for k in range(d):
                if (c >> (d - 1 - k)) & 1:
                    w *= frac[k]
                    node += min(base[k] + 1, res[k] - 1) * strides[k]
                else:
                    w *= 1.0 - frac[k]
                    node += base[k] * strides[k]
            idx[i, c] = node
            wts[i, c] = w
    return idx, wts
