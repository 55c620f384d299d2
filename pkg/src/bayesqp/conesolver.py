"""Convex quadratic programs over the nonnegative orthant and second-order cones.

Solves::

    minimize    1/2 z'Pz + q'z
    subject to  lin_G z <= lin_h
                ||A_j z + b_j||_2 <= c_j'z + d_j      for every cone block j

with a primal-dual interior-point method using Nesterov-Todd scaling and a
Mehrotra predictor-corrector. Internally every constraint is written as
``G z + s = h`` with ``s`` in the product cone. Failures to converge are
classified by a phase-one program (primal infeasibility) and a recession
program (unboundedness).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class SocBlock:
    """``||A z + b|| <= c'z + d``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float


@dataclass
class QuadraticConeProgram:
    P: np.ndarray
    q: np.ndarray
    lin_G: np.ndarray = None
    lin_h: np.ndarray = None
    soc_blocks: list = field(default_factory=list)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = self.q.size
        self.P = np.asarray(self.P, dtype=float).reshape(n, n)
        if self.lin_G is None:
            self.lin_G = np.zeros((0, n))
            self.lin_h = np.zeros(0)
        self.lin_G = np.asarray(self.lin_G, dtype=float).reshape(-1, n)
        self.lin_h = np.asarray(self.lin_h, dtype=float).reshape(-1)
        if self.lin_G.shape[0] != self.lin_h.shape[0]:
            raise ValueError("lin_G and lin_h disagree on the number of rows")
        blocks = []
        for blk in self.soc_blocks:
            if not isinstance(blk, SocBlock):
                blk = SocBlock(*blk)
            A = np.asarray(blk.A, dtype=float).reshape(-1, n)
            b = np.asarray(blk.b, dtype=float).reshape(-1)
            c = np.asarray(blk.c, dtype=float).reshape(n)
            if A.shape[0] != b.shape[0]:
                raise ValueError("cone block A and b disagree")
            blocks.append(SocBlock(A, b, c, float(blk.d)))
        self.soc_blocks = blocks
        if not np.allclose(self.P, self.P.T, atol=1e-10 * max(1.0, np.abs(self.P).max(initial=0))):
            raise ValueError("P must be symmetric")
        if n and np.linalg.eigvalsh(self.P).min() < -1e-8:
            raise ValueError("P must be positive semidefinite")

    @property
    def n(self) -> int:
        return self.q.size

    def standard_form(self):
        """``(G, h, l, soc_dims)`` with constraints ``G z + s = h``, ``s`` in the cone."""
        rows, rhs, dims = [self.lin_G], [self.lin_h], []
        for blk in self.soc_blocks:
            rows.append(-np.vstack([blk.c[None, :], blk.A]))
            rhs.append(np.concatenate([[blk.d], blk.b]))
            dims.append(blk.A.shape[0] + 1)
        return np.vstack(rows), np.concatenate(rhs), self.lin_G.shape[0], dims

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass
class SolverSettings:
    max_iters: int = 100
    feastol: float = 1e-9
    abstol: float = 1e-11
    reltol: float = 1e-11
    step_fraction: float = 0.99
    classify_failures: bool = True


@dataclass
class ConeSolution:
    status: Status
    z: np.ndarray
    lin_duals: np.ndarray
    soc_duals: list
    objective: float
    kkt_residuals: tuple
    iterations: int = 0
    slacks: np.ndarray = None

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


# ---------------------------------------------------------------------------
# Cone arithmetic on the product cone R^l_+ x Q^{q_1} x ... x Q^{q_k}


class _Cone:
    def __init__(self, l: int, soc_dims):
        self.l = l
        self.soc = list(soc_dims)
        self.slices = []
        start = l
        for q in self.soc:
            self.slices.append(slice(start, start + q))
            start += q
        self.dim = start
        self.degree = l + len(self.soc)

    def identity(self):
        e = np.zeros(self.dim)
        e[: self.l] = 1.0
        for sl in self.slices:
            e[sl.start] = 1.0
        return e

    def min_eig(self, u) -> float:
        """Smallest Jordan eigenvalue over all blocks (``+inf`` for the empty cone)."""
        vals = [u[: self.l].min()] if self.l else []
        for sl in self.slices:
            v = u[sl]
            vals.append(v[0] - np.linalg.norm(v[1:]))
        return min(vals) if vals else np.inf

    def prod(self, u, v):
        out = np.empty(self.dim)
        out[: self.l] = u[: self.l] * v[: self.l]
        for sl in self.slices:
            a, b = u[sl], v[sl]
            out[sl.start] = a @ b
            out[sl.start + 1: sl.stop] = a[0] * b[1:] + b[0] * a[1:]
        return out

    def div(self, lam, v):
        """Solve ``lam o x = v`` for ``x``."""
        out = np.empty(self.dim)
        out[: self.l] = v[: self.l] / lam[: self.l]
        for sl in self.slices:
            a, b = lam[sl], v[sl]
            det = a[0] ** 2 - a[1:] @ a[1:]
            x0 = (a[0] * b[0] - a[1:] @ b[1:]) / det
            out[sl.start] = x0
            out[sl.start + 1: sl.stop] = (b[1:] - x0 * a[1:]) / a[0]
        return out

    def max_step(self, u, du) -> float:
        """Largest ``t`` with ``u + t du`` in the cone (``u`` strictly interior)."""
        t = np.inf
        if self.l:
            neg = du[: self.l] < 0
            if np.any(neg):
                t = min(t, float(np.min(-u[: self.l][neg] / du[: self.l][neg])))
        for sl in self.slices:
            t = min(t, _soc_max_step(u[sl], du[sl]))
        return t

    def nt_scaling(self, s, z):
        """Symmetric NT scaling ``W`` (block diagonal) with ``W s = W^-1 z = lam``."""
        W = np.zeros((self.dim, self.dim))
        Winv = np.zeros((self.dim, self.dim))
        if self.l:
            w = np.sqrt(s[: self.l] / z[: self.l])
            idx = np.arange(self.l)
            W[idx, idx] = 1.0 / w
            Winv[idx, idx] = w
        for sl in self.slices:
            Wk, Wik = _soc_nt(s[sl], z[sl])
            W[sl, sl] = Wk
            Winv[sl, sl] = Wik
        return W, Winv


def _soc_max_step(u, du) -> float:
    t0, t1 = u[0], u[1:]
    a0, a1 = du[0], du[1:]
    A = a0 * a0 - a1 @ a1
    B = t0 * a0 - t1 @ a1
    n1 = np.linalg.norm(t1)
    C = (t0 - n1) * (t0 + n1)
    roots = []
    if abs(A) <= 1e-14 * max(1.0, a0 * a0 + a1 @ a1):
        if B < 0:
            roots.append(-C / (2.0 * B))
    else:
        disc = B * B - A * C
        if disc >= 0:
            sq = np.sqrt(disc)
            qv = -(B + np.copysign(sq, B))
            if qv != 0:
                roots.extend([qv / A, C / qv])
            else:
                roots.append(-B / A)
    pos = [r for r in roots if r > 0]
    t = min(pos) if pos else np.inf
    if a0 < 0:
        t = min(t, -t0 / a0)
    return t


def _soc_nt(s, z):
    """NT scaling of one second-order cone block: returns ``(W, W^-1)``."""
    J = -np.ones(s.size)
    J[0] = 1.0
    sn = np.sqrt(max(s[0] ** 2 - s[1:] @ s[1:], 1e-300))
    zn = np.sqrt(max(z[0] ** 2 - z[1:] @ z[1:], 1e-300))
    beta = np.sqrt(sn / zn)
    gamma = np.sqrt(max((s @ z / (sn * zn) + 1.0) / 2.0, 1e-300))
    wb = (s / sn + J * z / zn) / (2.0 * gamma)
    v = wb.copy()
    v[0] += 1.0
    v /= np.sqrt(2.0 * v[0])
    Jv = J * v
    # beta (2 vv' - J) maps z to lambda, its inverse maps s to lambda
    to_lam_from_z = beta * (2.0 * np.outer(v, v) - np.diag(J))
    to_lam_from_s = (2.0 * np.outer(Jv, Jv) - np.diag(J)) / beta
    return to_lam_from_s, to_lam_from_z


# ---------------------------------------------------------------------------


_REDUCED_TOL = 1e-7


def _interior_point(P, q, G, h, cone: _Cone, settings: SolverSettings):
    """Core IPM. Returns ``(status, x, s, z, iterations)``."""
    n = q.size
    m = cone.dim
    e = cone.identity()

    def reduced_solve(W, rx, rz, rho):
        # dz~ = W G dx + W rz + rho ; (P + G'W'W G) dx = -rx - (WG)'(W rz + rho)
        WG = W @ G
        M = P + WG.T @ WG
        rhs = -rx - WG.T @ (W @ rz + rho)
        try:
            dx = cho_solve(cho_factor(M, lower=True, check_finite=False), rhs, check_finite=False)
        except (LinAlgError, ValueError):
            dx = np.linalg.lstsq(M, rhs, rcond=None)[0]
        dzt = WG @ dx + W @ rz + rho
        return dx, dzt

    # starting point: solve the KKT system with identity scaling
    I = np.eye(m)
    x, zt = reduced_solve(I, q, -h, np.zeros(m))
    z = zt
    s = -z.copy()
    ts = -cone.min_eig(s)
    if ts >= -1e-8 * max(np.linalg.norm(s), 1.0):
        s = s + (1.0 + max(ts, 0.0)) * e
    tz = -cone.min_eig(z)
    if tz >= -1e-8 * max(np.linalg.norm(z), 1.0):
        z = z + (1.0 + max(tz, 0.0)) * e

    hnorm = max(1.0, np.linalg.norm(h))
    qnorm = max(1.0, np.linalg.norm(q))
    last_good = None

    def fail(it):
        # rounding stalls near the optimum: accept the last nearly converged iterate
        if last_good is not None:
            return (Status.OPTIMAL, *last_good, it)
        return Status.NUMERICAL_FAILURE, x, s, z, it

    for it in range(settings.max_iters + 1):
        rx = P @ x + q + G.T @ z
        rz = G @ x + s - h
        gap = float(s @ z)
        pcost = 0.5 * x @ P @ x + q @ x
        # residuals relative to the iterate scale, so large but finite solutions converge
        pres = np.linalg.norm(rz) / max(hnorm, np.linalg.norm(s))
        dres = np.linalg.norm(rx) / max(qnorm, np.linalg.norm(P @ x), np.linalg.norm(G.T @ z))
        if not (np.isfinite(gap) and np.isfinite(pres) and np.isfinite(dres)):
            return fail(it)
        relgap = gap / max(1.0, abs(pcost))
        if pres <= settings.feastol and dres <= settings.feastol and (
            gap <= settings.abstol or relgap <= settings.reltol
        ):
            return Status.OPTIMAL, x, s, z, it
        if max(pres, dres, min(gap, relgap)) <= _REDUCED_TOL:
            last_good = (x, s, z)
        if it == settings.max_iters:
            break
        if np.linalg.norm(x) > 1e13:
            return fail(it)

        W, Winv = cone.nt_scaling(s, z)
        lam = W @ s
        mu = gap / cone.degree
        lamsq = cone.prod(lam, lam)

        # predictor
        rho = cone.div(lam, -lamsq)
        dx, dzt = reduced_solve(W, rx, rz, rho)
        dst = rho - dzt
        ds, dz = Winv @ dst, W @ dzt
        a_aff = min(1.0, cone.max_step(s, ds), cone.max_step(z, dz))
        sig = (float((s + a_aff * ds) @ (z + a_aff * dz)) / gap) ** 3 if gap > 0 else 0.0
        sig = min(max(sig, 0.0), 1.0)

        # corrector
        rhs = -lamsq - cone.prod(dst, dzt) + sig * mu * e
        rho = cone.div(lam, rhs)
        dx, dzt = reduced_solve(W, (1.0 - sig) * rx, (1.0 - sig) * rz, rho)
        dst = rho - dzt
        ds, dz = Winv @ dst, W @ dzt
        step = min(1.0, settings.step_fraction * min(cone.max_step(s, ds), cone.max_step(z, dz)))
        if not np.isfinite(step) or step <= 0:
            return fail(it)
        # the analytic max step can overshoot by rounding near the cone boundary
        for _ in range(30):
            if cone.min_eig(s + step * ds) > 0 and cone.min_eig(z + step * dz) > 0:
                break
            step *= 0.5
        else:
            return fail(it)
        x = x + step * dx
        s = s + step * ds
        z = z + step * dz
    if last_good is not None:
        return (Status.OPTIMAL, *last_good, settings.max_iters)
    return Status.ITER_LIMIT, x, s, z, settings.max_iters


def _phase_one(G, h, cone: _Cone, settings: SolverSettings) -> float:
    """Optimal ``t`` of ``min t s.t. h + t e - G x in cone`` (bounded below by -1)."""
    n = G.shape[1]
    e = cone.identity()
    big = 1e6
    G1 = np.vstack([
        np.hstack([G, -e[:, None]]),
        np.hstack([np.zeros((1, n)), -np.ones((1, 1))]),
        np.hstack([np.eye(n), np.zeros((n, 1))]),
        np.hstack([-np.eye(n), np.zeros((n, 1))]),
    ])
    h1 = np.concatenate([h, [1.0], np.full(2 * n, big)])
    # linear rows first, then the cone rows
    m = cone.dim
    order = np.r_[np.arange(cone.l), np.arange(m, m + 1 + 2 * n), np.arange(cone.l, m)]
    cone1 = _Cone(cone.l + 1 + 2 * n, cone.soc)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    status, x, _, _, _ = _interior_point(
        np.zeros((n + 1, n + 1)), c, G1[order], h1[order], cone1,
        SolverSettings(max_iters=settings.max_iters, feastol=1e-9, abstol=1e-10, reltol=1e-10),
    )
    return float(x[-1]) if status in (Status.OPTIMAL, Status.ITER_LIMIT) else np.nan


def _recession(P, q, G, cone: _Cone, settings: SolverSettings) -> float:
    """``min q'd`` over recession directions ``d = N y`` with ``|y|_inf <= 1``.

    ``N`` spans the numerical null space of ``P``; directions with any
    curvature cannot make the objective unbounded.
    """
    lam, Q = np.linalg.eigh(0.5 * (P + P.T))
    N = Q[:, lam <= 1e-10 * max(1.0, float(np.abs(lam).max(initial=0.0)))]
    k = N.shape[1]
    if k == 0:
        return 0.0
    qN = N.T @ q
    GN = G @ N
    lin = np.vstack([GN[: cone.l], np.eye(k), -np.eye(k)])
    hl = np.concatenate([np.zeros(cone.l), np.ones(2 * k)])
    G1 = np.vstack([lin, GN[cone.l:]])
    h1 = np.concatenate([hl, np.zeros(cone.dim - cone.l)])
    cone1 = _Cone(lin.shape[0], cone.soc)
    status, y, _, _, _ = _interior_point(
        np.zeros((k, k)), qN, G1, h1, cone1,
        SolverSettings(max_iters=settings.max_iters, feastol=1e-9, abstol=1e-10, reltol=1e-10),
    )
    return float(qN @ y) if status in (Status.OPTIMAL, Status.ITER_LIMIT) else np.nan


def _split_duals(z, cone: _Cone):
    return z[: cone.l].copy(), [z[sl].copy() for sl in cone.slices]


def solve(program: QuadraticConeProgram, settings: SolverSettings | None = None) -> ConeSolution:
    """Solve a quadratic cone program; never raises on solver trouble."""
    settings = settings or SolverSettings()
    P, q = program.P, program.q
    n = program.n
    G, h, l, dims = program.standard_form()
    cone = _Cone(l, dims)

    if cone.dim == 0:
        return _solve_unconstrained(program)

    with np.errstate(over="ignore", invalid="ignore"):
        status, x, s, z, iters = _interior_point(P, q, G, h, cone, settings)
    if status != Status.OPTIMAL and settings.classify_failures:
        with np.errstate(over="ignore", invalid="ignore"):
            t = _phase_one(G, h, cone, settings)
        scale = max(1.0, np.abs(h).max(initial=0.0))
        if np.isfinite(t) and t > 1e-7 * scale:
            status = Status.INFEASIBLE
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                r = _recession(P, q, G, cone, settings)
            if np.isfinite(r) and r < -1e-7:
                status = Status.UNBOUNDED
    lin, socs = _split_duals(z, cone)
    sol = ConeSolution(
        status=status, z=x, lin_duals=lin, soc_duals=socs,
        objective=program.objective(x), kkt_residuals=(np.nan, np.nan, np.nan),
        iterations=iters, slacks=s,
    )
    with np.errstate(over="ignore", invalid="ignore"):
        rep = verify_kkt(program, sol)
    sol.kkt_residuals = (rep.primal, rep.dual, rep.gap)
    return sol


def _solve_unconstrained(program: QuadraticConeProgram) -> ConeSolution:
    P, q = program.P, program.q
    z, *_ = np.linalg.lstsq(P, -q, rcond=None)
    status = Status.OPTIMAL
    if np.linalg.norm(P @ z + q) > 1e-8 * max(1.0, np.linalg.norm(q)):
        status = Status.UNBOUNDED
    sol = ConeSolution(status, z, np.zeros(0), [], program.objective(z), (0.0, 0.0, 0.0))
    rep = verify_kkt(program, sol)
    sol.kkt_residuals = (rep.primal, rep.dual, rep.gap)
    return sol


@dataclass(frozen=True)
class KKTReport:
    primal: float
    dual: float
    gap: float
    dual_cone: float

    def max(self) -> float:
        return max(self.primal, self.dual, self.gap, self.dual_cone)


def verify_kkt(program: QuadraticConeProgram, solution: ConeSolution, tol: float | None = None) -> KKTReport:
    """Recompute KKT violations of a candidate primal-dual pair.

    ``primal`` is the largest violation of a linear row or cone, ``dual`` the
    infinity norm of the Lagrangian gradient, ``gap`` the largest
    complementarity product, ``dual_cone`` the largest dual cone violation.
    ``tol`` is accepted for interface symmetry; the report is returned raw.
    """
    G, h, l, dims = program.standard_form()
    cone = _Cone(l, dims)
    x = np.asarray(solution.z, dtype=float)
    zdual = np.concatenate([np.asarray(solution.lin_duals, dtype=float).reshape(-1)]
                           + [np.asarray(v, dtype=float) for v in solution.soc_duals]) \
        if cone.dim else np.zeros(0)
    s = h - G @ x
    stat = program.P @ x + program.q + G.T @ zdual
    primal = max(0.0, -cone.min_eig(s)) if cone.dim else 0.0
    dual_cone = max(0.0, -cone.min_eig(zdual)) if cone.dim else 0.0
    gap = 0.0
    if cone.dim:
        gap = float(np.abs(s[:l] * zdual[:l]).max(initial=0.0))
        for sl in cone.slices:
            gap = max(gap, abs(float(s[sl] @ zdual[sl])))
    dual = float(np.abs(stat).max(initial=0.0))
    return KKTReport(primal=primal, dual=dual, gap=gap, dual_cone=dual_cone)
