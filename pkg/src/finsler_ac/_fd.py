"""Finite-difference stencils for derivatives in the fibre (y) direction.

All stencils are central and fourth order. Mixed partial derivatives are
tensor products of the one-dimensional stencils. Stencil points and the
weighted sums are formed in extended precision (``np.longdouble``): later
x- and y-differences of these tensors (connection, Landsberg tensor, Cartan
divergence) would otherwise amplify double round-off past 1e-3.
"""
from __future__ import annotations

from itertools import combinations_with_replacement, permutations, product

import numpy as np

# offset -> weight, for derivative orders 1, 2, 3 (multiply by h^-order)
STENCILS = {
    0: ((0, 1.0),),
    1: ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12)),
    2: ((-2, -1 / 12), (-1, 16 / 12), (0, -30 / 12), (1, 16 / 12), (2, -1 / 12)),
    3: ((-3, 1 / 8), (-2, -1.0), (-1, 13 / 8), (1, -13 / 8), (2, 1.0), (3, -1 / 8)),
}


def _multi_index_stencil(index, n):
    """Offsets (k, n) and weights (k,) for the mixed partial along ``index``."""
    counts = np.bincount(np.asarray(index, dtype=int), minlength=n)
    axes = [i for i in range(n) if counts[i] > 0]
    pieces = [STENCILS[counts[i]] for i in axes]
    offsets, weights = [], []
    for combo in product(*pieces):
        off = np.zeros(n)
        w = 1.0
        for axis, (o, wt) in zip(axes, combo):
            off[axis] = o
            w *= wt
        offsets.append(off)
        weights.append(w)
    return np.array(offsets), np.array(weights)


def _plan(n, order):
    indices = list(combinations_with_replacement(range(n), order))
    blocks = [_multi_index_stencil(idx, n) for idx in indices]
    offsets = np.concatenate([b[0] for b in blocks], axis=0)
    sizes = [len(b[1]) for b in blocks]
    return indices, offsets, blocks, sizes


def _raw_tensor(fun, y, h, order):
    n = y.shape[-1]
    indices, offsets, blocks, sizes = _plan(n, order)
    yl, hl = y.astype(np.longdouble), h.astype(np.longdouble)
    pts = yl[..., None, :] + hl[..., None, None] * offsets
    vals = np.asarray(fun(pts))  # (..., P)
    out = np.empty(y.shape[:-1] + (n,) * order)
    start = 0
    for idx, (_, w), size in zip(indices, blocks, sizes):
        d = vals[..., start:start + size] @ w.astype(np.longdouble) / hl**order
        start += size
        # scatter into every permutation of the index
        for perm in set(permutations(idx)):
            out[(Ellipsis,) + perm] = d
    return out


def derivative_tensor(fun, y, h, order, richardson=False):
    """Symmetric tensor of ``order``-th partial derivatives of a scalar function.

    Parameters
    ----------
    fun : callable
        Maps an array (..., P, n) of points to values (..., P).
    y : ndarray (..., n)
        Base points.
    h : ndarray (...,)
        Step per base point.
    order : {1, 2, 3}
    richardson : bool
        Combine steps h and h/2 as (16 D(h/2) - D(h)) / 15.
    """
    y = np.asarray(y, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), y.shape[:-1])
    d = _raw_tensor(fun, y, h, order)
    if richardson:
        d2 = _raw_tensor(fun, y, h / 2, order)
        d = (16 * d2 - d) / 15
    return d


def first_derivative_along(fun, y, h):
    """Derivative of a tensor-valued function of y along each coordinate axis.

    ``fun`` maps (..., n) to (..., *shape); returns (..., n, *shape) with the
    derivative axis right after the batch dimensions of ``y``.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    h = np.broadcast_to(np.asarray(h, dtype=float), y.shape[:-1])
    parts = []
    for m in range(n):
        acc = 0.0
        for off, w in STENCILS[1]:
            shifted = y.copy()
            shifted[..., m] += off * h
            acc = acc + w * fun(shifted)
        parts.append(acc / h.reshape(h.shape + (1,) * (acc.ndim - h.ndim)))
    return np.stack(parts, axis=h.ndim)
