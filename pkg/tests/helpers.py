"""Shared fixtures and independent oracles for the test suite."""

import itertools

import numpy as np

from bayesqp.conesolver import QuadraticConeProgram, SocBlock
from bayesqp.surrogate import JointPosterior


def random_program(rng, n, n_lin, n_cones, cone_size=3, box=None, psd=True):
    """Random program that is strictly feasible at a known point ``z0``.

    A box ``|z_i - z0_i| <= box`` keeps it bounded when requested.
    """
    B = rng.normal(size=(n, n))
    P = B @ B.T * rng.uniform(0.1, 1.0) if psd else np.zeros((n, n))
    q = rng.normal(size=n)
    z0 = rng.uniform(-0.5, 0.5, size=n)
    G = rng.normal(size=(n_lin, n))
    h = G @ z0 + rng.uniform(0.1, 1.0, size=n_lin)
    blocks = []
    for _ in range(n_cones):
        k = int(rng.integers(1, cone_size + 1))
        A, b, c = rng.normal(size=(k, n)), rng.normal(size=k), rng.normal(size=n)
        d = np.linalg.norm(A @ z0 + b) - c @ z0 + rng.uniform(0.1, 1.0)
        blocks.append(SocBlock(A, b, c, d))
    if box is not None:
        G = np.vstack([G, np.eye(n), -np.eye(n)])
        h = np.concatenate([h, box + z0, box - z0])
    return QuadraticConeProgram(P, q, G, h, blocks)


def feasible_mask(program, Z, tol=0.0):
    ok = np.all(Z @ program.lin_G.T <= program.lin_h + tol, axis=1)
    for blk in program.soc_blocks:
        lhs = np.linalg.norm(Z @ blk.A.T + blk.b, axis=1)
        ok &= lhs <= Z @ blk.c + blk.d + tol
    return ok


def brute_force_minimum(program, lo, hi, points=81, rounds=30, shrink=0.6, polish=False):
    """Zooming grid search over feasible points only (n <= 3).

    Each round evaluates a full grid, keeps the best feasible point, and
    shrinks the window around it. ``polish`` finishes with an SLSQP run from
    the best grid point, for optima on thin feasible slivers the grid misses.
    No solver logic is shared with the IPM.
    """
    n = program.n
    lo, hi = np.full(n, lo, dtype=float), np.full(n, hi, dtype=float)
    best_z, best_val = None, np.inf
    for _ in range(rounds):
        axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
        Z = np.array(list(itertools.product(*axes)))
        Z = Z[feasible_mask(program, Z)]
        if len(Z):
            vals = 0.5 * np.einsum("ij,jk,ik->i", Z, program.P, Z) + Z @ program.q
            i = int(np.argmin(vals))
            if vals[i] < best_val:
                best_val, best_z = float(vals[i]), Z[i]
        if best_z is None:
            raise RuntimeError("no feasible grid point")
        half = (hi - lo) * shrink / 2
        lo, hi = best_z - half, best_z + half
    if polish:
        z, val = _slsqp_polish(program, best_z)
        if val < best_val:
            best_z, best_val = z, val
    return best_z, best_val


def _slsqp_polish(program, z0):
    """Local refinement with scipy SLSQP; results must be feasible up to rounding."""
    from scipy.optimize import minimize

    cons = [{"type": "ineq", "fun": lambda z: program.lin_h - program.lin_G @ z}] if program.lin_G.size else []
    for blk in program.soc_blocks:
        cons.append({"type": "ineq",
                     "fun": lambda z, b=blk: b.c @ z + b.d - np.linalg.norm(b.A @ z + b.b)})
    obj = lambda z: 0.5 * z @ program.P @ z + program.q @ z
    res = minimize(obj, z0, method="SLSQP", constraints=cons, options={"ftol": 1e-14, "maxiter": 500})
    if feasible_mask(program, res.x[None, :], tol=1e-9)[0]:
        return res.x, float(obj(res.x))
    return z0, np.inf


def posterior(mu_f=0.0, var_f=1.0, mu_grad=(1.0,), cov_grad=None, cov_grad_f=None, mu_hess=None,
              y_mean=0.0, y_std=1.0, x=None):
    g = np.atleast_1d(np.asarray(mu_grad, dtype=float))
    d = g.size
    return JointPosterior(
        x=np.zeros(d) if x is None else np.asarray(x, dtype=float),
        mu_f=float(mu_f), var_f=float(var_f), mu_grad=g,
        cov_grad=np.eye(d) if cov_grad is None else np.asarray(cov_grad, dtype=float).reshape(d, d),
        cov_grad_f=np.zeros(d) if cov_grad_f is None else np.asarray(cov_grad_f, dtype=float).reshape(d),
        mu_hess=np.eye(d) if mu_hess is None else np.asarray(mu_hess, dtype=float).reshape(d, d),
        y_mean=y_mean, y_std=y_std,
    )


def random_posterior(rng, d, scale=1.0):
    """Random but valid joint posterior moments."""
    B = rng.normal(size=(d + 1, d + 1)) * scale
    S = B @ B.T / (d + 1) + 1e-3 * np.eye(d + 1)
    H = rng.normal(size=(d, d))
    return JointPosterior(
        x=np.zeros(d), mu_f=float(rng.normal()), var_f=float(S[0, 0]), mu_grad=rng.normal(size=d),
        cov_grad=S[1:, 1:], cov_grad_f=S[1:, 0], mu_hess=0.5 * (H + H.T),
    )
