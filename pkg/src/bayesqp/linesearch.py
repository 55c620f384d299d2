"""Constrained Thompson-sampling line search and incumbent selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from bayesqp._linalg import ModelError, jittered_cholesky
from bayesqp.quasirandom import sobol
from bayesqp.surrogate import FittedGP


@dataclass(frozen=True)
class Segment:
    """Points ``origin + alpha * direction`` for ``alpha`` in [0, 1], clipped to the cube."""

    origin: np.ndarray
    direction: np.ndarray
    n_candidates: int = 100

    def alphas(self) -> np.ndarray:
        # alpha = 0 first, then Sobol points 1 .. N-1 of the 1-D sequence
        rest = sobol(1, self.n_candidates - 1, skip=1)[:, 0]
        return np.concatenate([[0.0], rest])

    def points(self, alphas=None) -> np.ndarray:
        a = self.alphas() if alphas is None else np.asarray(alphas, dtype=float)
        X = self.origin[None, :] + a[:, None] * self.direction[None, :]
        return np.clip(X, 0.0, 1.0)


@dataclass
class EvaluatedPoint:
    x: np.ndarray
    f: float
    c: np.ndarray
    iteration: int = -1

    def violation(self) -> float:
        return float(np.maximum(0.0, -np.asarray(self.c, dtype=float)).sum())

    def feasible(self) -> bool:
        return bool(np.all(np.asarray(self.c) >= 0))


def incumbent_key(f: float, c) -> tuple:
    """Lexicographic key, smaller is better: feasible points first by ``f``,
    then infeasible points by total violation."""
    c = np.asarray(c, dtype=float)
    if np.all(c >= 0):
        return (0, float(f))
    return (1, float(np.maximum(0.0, -c).sum()))


def select_incumbent(evaluated: Sequence[EvaluatedPoint]) -> EvaluatedPoint:
    """Best feasible point, else least total violation; ties go to the earliest."""
    if len(evaluated) == 0:
        raise ValueError("select_incumbent needs at least one point")
    best, best_key = None, None
    for p in evaluated:
        k = incumbent_key(p.f, p.c)
        if best_key is None or k < best_key:
            best, best_key = p, k
    return best


def rank_candidates(f_path, c_paths) -> np.ndarray:
    """Candidate order for one sample path (best first).

    ``c_paths`` has shape (m, N) in raw units (feasible when >= 0).
    """
    f_path = np.asarray(f_path, dtype=float)
    N = f_path.size
    c_paths = np.asarray(c_paths, dtype=float).reshape(-1, N)
    if c_paths.shape[0] == 0:
        return np.argsort(f_path, kind="stable")
    feas = np.all(c_paths >= 0, axis=0)
    viol = np.maximum(0.0, -c_paths).sum(0)
    # feasible by objective, then infeasible by violation
    primary = np.where(feas, 0, 1)
    secondary = np.where(feas, f_path, viol)
    return np.lexsort((secondary, primary))


def select_from_paths(f_paths, c_paths, M: int, taken: Optional[Sequence[int]] = None,
                      groups=None) -> list[int]:
    """Apply the constrained Thompson rule to ``M`` sample paths.

    ``f_paths``: (M, N); ``c_paths``: (M, m, N). Candidates listed in
    ``taken`` (and earlier picks) are skipped in favor of that path's
    next-best candidate. ``groups`` labels candidates that are the same
    point; blocking one blocks its whole group.
    """
    f_paths = np.atleast_2d(np.asarray(f_paths, dtype=float))
    N = f_paths.shape[1]
    c_paths = np.asarray(c_paths, dtype=float).reshape(f_paths.shape[0], -1, N)
    groups = np.arange(N) if groups is None else np.asarray(groups)
    chosen: list[int] = []
    blocked = {int(groups[i]) for i in (taken or ())}
    for j in range(M):
        order = rank_candidates(f_paths[j], c_paths[j])
        pick = next((int(i) for i in order if int(groups[i]) not in blocked), None)
        if pick is None:
            pick = int(order[0])
        chosen.append(pick)
        blocked.add(int(groups[pick]))
    return chosen


def _sample_paths(gp: FittedGP, X, M: int, rng) -> tuple[np.ndarray, bool]:
    mean, cov = gp.posterior_mean_cov(X)
    N = len(mean)
    Z = rng.standard_normal((M, N))
    try:
        L, _ = jittered_cholesky(cov)
        draws = mean[None, :] + Z @ L.T
        joint = True
    except ModelError:
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        draws = mean[None, :] + Z * sd[None, :]
        joint = False
    # back to raw units
    return gp.y_mean + gp.y_std * draws, joint


@dataclass
class ThompsonResult:
    points: np.ndarray
    alphas: np.ndarray
    indices: list
    joint: bool


def thompson_select(gp_f: FittedGP, gp_cs: Sequence[FittedGP], segment: Segment, M: int,
                    rng) -> ThompsonResult:
    """Pick ``M`` distinct points on the segment by constrained posterior sampling.

    Candidate 0 is the segment origin, which is already evaluated; it takes
    part in the ranking but is never returned. ``rng`` is one generator or a
    sequence with one generator per model (objective first), which keeps the
    objective draws independent of how many constraints exist.
    """
    rngs = [rng] * (1 + len(gp_cs)) if isinstance(rng, np.random.Generator) else list(rng)
    if len(rngs) != 1 + len(gp_cs):
        raise ValueError("need one generator per model")
    if M < 1 or segment.n_candidates < M + 1:
        raise ValueError("need M >= 1 and more candidates than M")
    alphas = segment.alphas()
    X = segment.points(alphas)
    f_paths, joint = _sample_paths(gp_f, X, M, rngs[0])
    c_list = []
    for gp, r in zip(gp_cs, rngs[1:]):
        cp, ok = _sample_paths(gp, X, M, r)
        joint = joint and ok
        c_list.append(cp)
    if c_list:
        c_paths = np.stack(c_list, axis=1)
    else:
        c_paths = np.zeros((M, 0, len(alphas)))
    _, groups = np.unique(X, axis=0, return_inverse=True)
    idx = select_from_paths(f_paths, c_paths, M, taken=[0], groups=groups.reshape(-1))
    return ThompsonResult(points=X[idx], alphas=alphas[idx], indices=idx, joint=joint)
