"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ccore`` extension is not available. Every function
here has the same signature and semantics as its counterpart in
``_ccore.pyx``; the test-suite checks both against each other.
"""

from __future__ import annotations

import numpy as np

SOBOL_BITS = 32


def ard_gram(X1, X2, lengthscales, outputscale):
    """Squared-exponential cross-covariance ``k(X1, X2)`` with ARD lengthscales."""
    A = np.asarray(X1, dtype=float) / lengthscales
    B = np.asarray(X2, dtype=float) / lengthscales
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return outputscale * np.exp(-0.5 * sq)


def lengthscale_contract(X, KW):
    """Return ``g[i] = sum_jk KW[j, k] * (X[j, i] - X[k, i])**2``.

    ``KW`` must be symmetric. Expanding the square avoids the n x n x d
    difference tensor.
    """
    X = np.asarray(X, dtype=float)
    row = KW.sum(1)
    X2 = X * X
    return 2.0 * (row @ X2) - 2.0 * np.einsum("ji,jk,ki->i", X, KW, X)


def se_grad_hess_sum(x, X, alpha, lengthscales, outputscale):
    """Kernel vector, gradient stack and alpha-weighted Hessian sum at ``x``.

    Returns ``(kvec, G, H)`` where ``kvec[j] = k(x, X[j])``,
    ``G[:, j] = d/dx k(x, X[j])`` and
    ``H = sum_j alpha[j] * d2/dx2 k(x, X[j])``.
    """
    inv_l2 = 1.0 / (lengthscales * lengthscales)
    R = (x[None, :] - X) * inv_l2  # Lambda^-1 (x - x_j), one row per point
    r2 = ((x[None, :] - X) ** 2 * inv_l2).sum(1)
    kvec = outputscale * np.exp(-0.5 * r2)
    G = -(R * kvec[:, None]).T
    w = alpha * kvec
    H = (R.T * w) @ R - w.sum() * np.diag(inv_l2)
    return kvec, G, H


def sobol_block(V, start, n):
    """Points ``start .. start+n-1`` of the Sobol sequence for direction table ``V``.

    ``V`` has shape (dim, SOBOL_BITS) holding integer direction numbers.
    """
    V = np.asarray(V, dtype=np.uint64)
    dim = V.shape[0]
    out = np.empty((n, dim))
    if n == 0:
        return out
    state = np.zeros(dim, dtype=np.uint64)
    gray = start ^ (start >> 1)
    bit = 0
    while gray:
        if gray & 1:
            state ^= V[:, bit]
        gray >>= 1
        bit += 1
    scale = 1.0 / float(1 << SOBOL_BITS)
    out[0] = state * scale
    i = start
    for row in range(1, n):
        # index of the lowest zero bit of i selects the direction to flip
        c = 0
        j = i
        while j & 1:
            j >>= 1
            c += 1
        state ^= V[:, c]
        out[row] = state * scale
        i += 1
    return out
