from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, LinAlgError

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


class ModelError(RuntimeError):
    """A covariance could not be factorized even after the whole jitter ladder."""

    def __init__(self, message: str, ladder=JITTER_LADDER):
        super().__init__(f"{message} (tried jitter {list(ladder)})")
        self.ladder = tuple(ladder)


def jittered_cholesky(A, ladder=JITTER_LADDER):
    """Lower Cholesky factor of ``A + j*I`` for the first ``j`` in ``ladder`` that works.

    Returns ``(L, jitter)``. Raises :class:`ModelError` when every rung fails.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ModelError("matrix has non-finite entries", ladder)
    eye = np.eye(A.shape[0])
    for jitter in ladder:
        try:
            L = cholesky(A + jitter * eye if jitter else A, lower=True, check_finite=False)
        except LinAlgError:
            continue
        if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0):
            return L, jitter
    raise ModelError("Cholesky factorization failed", ladder)


def chol_solve(L, b):
    return cho_solve((L, True), b, check_finite=False)
