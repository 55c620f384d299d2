"""Sobol streams and the ball-subsampling transform.

The direction numbers are the Joe-Kuo ``new-joe-kuo-6`` table, shipped for
the first 128 dimensions in ``data/new-joe-kuo-6.128``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import ndtri

from bayesqp._backend import SOBOL_BITS, core

MAX_DIM = 128


@lru_cache(maxsize=1)
def _table() -> list[tuple[int, int, list[int]]]:
    text = resources.files("bayesqp").joinpath("data/new-joe-kuo-6.128").read_text()
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = [int(t) for t in line.split()]
        rows.append((parts[1], parts[2], parts[3:]))
    return rows


@lru_cache(maxsize=None)
def direction_numbers(dim: int) -> np.ndarray:
    """Direction integers ``V`` of shape (dim, SOBOL_BITS)."""
    if not 1 <= dim <= MAX_DIM:
        raise ValueError(f"Sobol dimension must be in [1, {MAX_DIM}], got {dim}")
    B = SOBOL_BITS
    V = np.zeros((dim, B), dtype=np.uint64)
    for k in range(B):
        V[0, k] = 1 << (B - 1 - k)
    for j in range(1, dim):
        s, a, m_init = _table()[j - 1]
        m = list(m_init) + [0] * (B - s)
        for k in range(s, B):
            val = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    val ^= m[k - i] << i
            m[k] = val
        for k in range(B):
            V[j, k] = m[k] << (B - 1 - k)
    V.setflags(write=False)
    return V


@dataclass
class SobolStream:
    """Deterministic unscrambled Sobol cursor; single owner, clone for sharing."""

    dimension: int
    index: int = 0
    table: str = "new-joe-kuo-6"

    def __post_init__(self):
        direction_numbers(self.dimension)
        if self.index < 0:
            raise ValueError("index must be nonnegative")

    def next(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be nonnegative")
        pts = core.sobol_block(direction_numbers(self.dimension), self.index, n)
        self.index += n
        return pts

    def clone(self) -> "SobolStream":
        return SobolStream(self.dimension, self.index, self.table)


def sobol_next(stream: SobolStream, n: int) -> np.ndarray:
    return stream.next(n)


def sobol(dim: int, n: int, skip: int = 0) -> np.ndarray:
    """First ``n`` points after skipping ``skip`` (index 0 is the origin)."""
    return SobolStream(dim, skip).next(n)


def ball_samples(center, radius: float, K: int, stream: SobolStream,
                 lower=None, upper=None) -> np.ndarray:
    """Draw ``K`` points from the radius-``radius`` ball around ``center``.

    Each Sobol point ``(u_dir, u_rad)`` in ``[0, 1]^(d+1)`` yields a direction
    from the inverse normal CDF of ``u_dir`` and a radius
    ``radius * u_rad**(1/d)``. Points are clipped into ``[lower, upper]``
    (the unit cube by default).
    """
    center = np.asarray(center, dtype=float)
    d = center.size
    if K <= 0:
        raise ValueError("K must be positive")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if stream.dimension != d + 1:
        raise ValueError(f"stream dimension must be d + 1 = {d + 1}")
    lower = np.zeros(d) if lower is None else np.asarray(lower, dtype=float)
    upper = np.ones(d) if upper is None else np.asarray(upper, dtype=float)
    U = stream.next(K)
    return _ball_transform(center, radius, U, lower, upper)


def _ball_transform(center, radius, U, lower, upper, clip=True):
    d = center.size
    # keep the inverse CDF finite at the (measure-zero) cube faces
    Z = ndtri(np.clip(U[:, :d], 1e-12, 1 - 1e-12))
    norms = np.linalg.norm(Z, axis=1)
    dirs = np.empty_like(Z)
    ok = norms > 0
    dirs[ok] = Z[ok] / norms[ok, None]
    dirs[~ok] = 0.0
    dirs[~ok, 0] = 1.0
    r = radius * U[:, d] ** (1.0 / d)
    X = center[None, :] + r[:, None] * dirs
    return np.clip(X, lower, upper) if clip else X
