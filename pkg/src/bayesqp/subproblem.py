"""The uncertainty-aware SQP subproblem and its variants.

Decision vector layout is ``[p (d), b_f, b_c (m), s (m, slacked only)]``.
The robust program reads::

    min  1/2 p'Hp + mu_g'p + mu_f + q_f * b_f
    s.t. ||L_f'(1, p)|| <= b_f
         ||L_ci'(1, p)|| <= b_ci
         -mu_gci'p + q_c * b_ci <= mu_ci - thr_i
         b >= 0

where ``q = Phi^-1(1 - delta)`` and ``thr_i`` is the standardized value of
a raw constraint reading of zero. The expected-value program drops every
``b`` and every cone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from bayesqp._linalg import JITTER_LADDER, ModelError, jittered_cholesky
from bayesqp.conesolver import (
    QuadraticConeProgram,
    SocBlock,
    SolverSettings,
    Status,
    solve,
)
from bayesqp.surrogate import JointPosterior


class Variant(str, enum.Enum):
    ROBUST = "Robust"
    EXPECTED_VALUE = "ExpectedValue"
    SLACKED = "Slacked"
    UNCONSTRAINED_ROBUST = "UnconstrainedRobust"


class SubproblemError(RuntimeError):
    pass


@dataclass
class SubproblemConfig:
    delta_f: float = 0.2
    delta_c: float = 0.2
    variant: Variant = Variant.ROBUST
    slack_penalty: float = 100.0
    clip_eps: float = 1e-5
    trust_bound: float = np.inf
    # per-coordinate limits on p, e.g. (-x_t, 1 - x_t) to stay in the unit cube
    step_lower: Optional[np.ndarray] = None
    step_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("delta_f", "delta_c"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        self.variant = Variant(self.variant)
        if self.slack_penalty <= 0 or self.clip_eps <= 0:
            raise ValueError("slack_penalty and clip_eps must be positive")

    @property
    def q_f(self) -> float:
        return float(ndtri(1.0 - self.delta_f))

    @property
    def q_c(self) -> float:
        return float(ndtri(1.0 - self.delta_c))


@dataclass
class LocalModelSet:
    """Posteriors of the objective and every constraint at one iterate."""

    objective: JointPosterior
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        x = self.objective.x
        for c in self.constraints:
            if c.dim != self.objective.dim or not np.array_equal(c.x, x):
                raise ValueError("all posteriors must be evaluated at the same point")

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def dim(self) -> int:
        return self.objective.dim


@dataclass
class SearchDirection:
    p: np.ndarray
    multipliers: np.ndarray
    slacks: np.ndarray
    cone_auxiliaries: tuple
    status: Status
    used_fallback: bool
    objective: float
    variant: Variant


# ---------------------------------------------------------------------------


def lagrangian_hessian(models: LocalModelSet, multipliers) -> np.ndarray:
    xi = np.asarray(multipliers, dtype=float).reshape(-1)
    if xi.size != models.m:
        raise ValueError(f"expected {models.m} multipliers, got {xi.size}")
    H = np.array(models.objective.mu_hess, dtype=float)
    for w, c in zip(xi, models.constraints):
        H = H - w * c.mu_hess
    return 0.5 * (H + H.T)


def clip_spd(H, eps: float = 1e-5) -> np.ndarray:
    """Replace every eigenvalue below ``eps`` by ``eps``."""
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    try:
        lam, Q = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise SubproblemError(f"eigendecomposition failed: {exc}") from exc
    if lam.min() >= eps:
        return H
    out = (Q * np.maximum(lam, eps)) @ Q.T
    return 0.5 * (out + out.T)


def joint_cholesky(var, cov_grad_f, cov_grad, jitter_ladder=JITTER_LADDER) -> np.ndarray:
    """Lower factor of ``[[var, cov_grad_f'], [cov_grad_f, cov_grad]]``."""
    g = np.atleast_1d(np.asarray(cov_grad_f, dtype=float))
    d = g.size
    S = np.empty((d + 1, d + 1))
    S[0, 0] = var
    S[0, 1:] = g
    S[1:, 0] = g
    S[1:, 1:] = np.asarray(cov_grad, dtype=float).reshape(d, d)
    S = 0.5 * (S + S.T)
    L, _ = jittered_cholesky(S, jitter_ladder)
    return L


def _psd_factor(post: JointPosterior) -> np.ndarray:
    """Factor ``F`` with ``F F' = S`` after projecting ``S`` onto the PSD cone."""
    S = post.stacked_cov()
    lam, Q = np.linalg.eigh(0.5 * (S + S.T))
    return Q * np.sqrt(np.maximum(lam, 0.0))


def _factor(post: JointPosterior, robust_factor: bool) -> np.ndarray:
    if robust_factor:
        try:
            return joint_cholesky(post.var_f, post.cov_grad_f, post.cov_grad)
        except ModelError:
            return _psd_factor(post)
    return joint_cholesky(post.var_f, post.cov_grad_f, post.cov_grad)


def _build(models: LocalModelSet, H, config: SubproblemConfig, *, robust: bool,
           constrained: bool, slacked: bool, robust_factor: bool = False):
    d = models.dim
    m = models.m if constrained else 0
    n_b = (1 + m) if robust else 0
    n_s = m if slacked else 0
    n = d + n_b + n_s
    ib_f = d
    ib_c = d + 1
    i_s = d + n_b

    P = np.zeros((n, n))
    P[:d, :d] = H
    q = np.zeros(n)
    q[:d] = models.objective.mu_grad
    if robust:
        q[ib_f] = config.q_f
    if slacked:
        q[i_s:i_s + m] = config.slack_penalty

    rows, rhs, blocks = [], [], []
    for i in range(m):
        c = models.constraints[i]
        row = np.zeros(n)
        row[:d] = -c.mu_grad
        if robust:
            row[ib_c + i] = config.q_c
        if slacked:
            row[i_s + i] = -1.0
        rows.append(row)
        rhs.append(c.mu_f - c.raw_threshold())
    for j in range(d, n):
        # b >= 0 and s >= 0
        row = np.zeros(n)
        row[j] = -1.0
        rows.append(row)
        rhs.append(0.0)
    for bound, sign in ((config.step_upper, 1.0), (config.step_lower, -1.0)):
        if bound is None:
            continue
        bound = np.asarray(bound, dtype=float).reshape(d)
        for j in range(d):
            if np.isfinite(bound[j]):
                row = np.zeros(n)
                row[j] = sign
                rows.append(row)
                rhs.append(sign * bound[j])
    if np.isfinite(config.trust_bound):
        for j in range(d):
            for sign in (1.0, -1.0):
                row = np.zeros(n)
                row[j] = sign
                rows.append(row)
                rhs.append(config.trust_bound)

    if robust:
        posts = [models.objective] + [models.constraints[i] for i in range(m)]
        for k, post in enumerate(posts):
            F = _factor(post, robust_factor)
            Ft = F.T
            A = np.zeros((Ft.shape[0], n))
            A[:, :d] = Ft[:, 1:]
            cvec = np.zeros(n)
            cvec[ib_f + k] = 1.0
            blocks.append(SocBlock(A, Ft[:, 0].copy(), cvec, 0.0))

    lin_G = np.array(rows).reshape(-1, n)
    lin_h = np.array(rhs, dtype=float)
    return QuadraticConeProgram(P, q, lin_G, lin_h, blocks)


def assemble(models: LocalModelSet, H, config: SubproblemConfig) -> QuadraticConeProgram:
    """Robust program (constraint rows and cones dropped for UnconstrainedRobust)."""
    constrained = config.variant != Variant.UNCONSTRAINED_ROBUST
    return _build(models, H, config, robust=True, constrained=constrained, slacked=False)


def assemble_slacked(models: LocalModelSet, H, config: SubproblemConfig) -> QuadraticConeProgram:
    """Robust program with penalized slacks on every linearized constraint row."""
    return _build(models, H, config, robust=True, constrained=True, slacked=True,
                  robust_factor=True)


def assemble_expected_value(models: LocalModelSet, H, config: SubproblemConfig,
                            slacked: bool = False) -> QuadraticConeProgram:
    return _build(models, H, config, robust=False, constrained=True, slacked=slacked)


def _direction(models, config, program, sol, *, robust, slacked, constrained, fallback, variant):
    d = models.dim
    m = models.m if constrained else 0
    z = sol.z
    n_b = (1 + m) if robust else 0
    aux = (float(z[d]), z[d + 1:d + 1 + m].copy()) if robust else (0.0, np.zeros(m))
    slacks = z[d + n_b:d + n_b + m].copy() if slacked else np.zeros(models.m)
    xi = np.zeros(models.m)
    if m:
        xi[:m] = np.maximum(sol.lin_duals[:m], 0.0)
    return SearchDirection(
        p=z[:d].copy(), multipliers=xi, slacks=slacks, cone_auxiliaries=aux,
        status=sol.status, used_fallback=fallback,
        objective=sol.objective + models.objective.mu_f, variant=variant,
    )


def solve_direction(models: LocalModelSet, prev_multipliers, config: SubproblemConfig,
                    solver: Optional[SolverSettings] = None) -> SearchDirection:
    """Build the Lagrangian Hessian, solve the configured program, fall back to slacks.

    Raises :class:`SubproblemError` when both the primary and the slacked
    program fail.
    """
    H = clip_spd(lagrangian_hessian(models, prev_multipliers), config.clip_eps)
    variant = config.variant
    if variant == Variant.EXPECTED_VALUE:
        robust = False
    else:
        robust = True
    constrained = variant != Variant.UNCONSTRAINED_ROBUST
    slacked_first = variant == Variant.SLACKED

    attempts = []
    if not slacked_first:
        attempts.append(False)
    if constrained and models.m:
        attempts.append(True)
    if not attempts:
        attempts.append(False)
    last = None
    for slacked in attempts:
        try:
            program = _build(models, H, config, robust=robust, constrained=constrained,
                             slacked=slacked, robust_factor=slacked)
        except ModelError as exc:
            last = exc
            continue
        sol = solve(program, solver)
        last = sol.status
        if sol.status == Status.OPTIMAL:
            return _direction(models, config, program, sol, robust=robust, slacked=slacked,
                              constrained=constrained, fallback=slacked and not slacked_first,
                              variant=variant)
    raise SubproblemError(f"subproblem could not be solved (last status: {last})")
