"""Second-order GP surrogate.

A zero-mean GP on standardized targets whose posterior is evaluated jointly
for the value, the gradient and the Hessian mean at a query point. The Gram
matrix is factorized once per fit; every posterior quantity reuses the
Cholesky factor and the weight vector ``alpha = K^-1 y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from bayesqp._backend import core
from bayesqp._linalg import JITTER_LADDER, ModelError, chol_solve, jittered_cholesky
from bayesqp.kernel import KernelHyperparameters, gram, lengthscale_bounds

LOG_2PI = math.log(2.0 * math.pi)
STD_FLOOR = 1e-8
OUTPUT_SCALE_BOUNDS = (1e-2, 1e2)


@dataclass(frozen=True)
class Dataset:
    """Inputs in the unit cube and raw (unstandardized) targets."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, 0)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
        if X.size and (np.any(X < -1e-12) or np.any(X > 1 + 1e-12)):
            raise ValueError("inputs must lie in the unit hypercube")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def standardize(y) -> tuple[np.ndarray, float, float]:
    """Return ``(y_std, mean, std)``; sample std (n-1 divisor), 1 for n < 2."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return y.copy(), 0.0, 1.0
    mean = float(y.mean())
    std = float(y.std(ddof=1)) if y.size > 1 else 1.0
    std = max(std, STD_FLOOR)
    return (y - mean) / std, mean, std


@dataclass
class FitConfig:
    """How to obtain kernel hyperparameters.

    ``mode="frozen"`` uses ``hyper`` verbatim. ``mode="learn"`` maximizes the
    log marginal likelihood over lengthscales and output scale from
    ``n_starts`` starting points (the ``sqrt(d)`` initialization plus
    log-uniform perturbations); the noise stays at ``noise_variance``.
    """

    mode: Literal["frozen", "learn"] = "learn"
    hyper: Optional[KernelHyperparameters] = None
    noise_variance: float = 1e-4
    n_starts: int = 4
    maxiter: int = 100
    seed: int = 0
    warm_start: Optional[KernelHyperparameters] = None

    def __post_init__(self):
        if self.mode not in ("frozen", "learn"):
            raise ValueError(f"unknown fit mode {self.mode!r}")
        if self.mode == "frozen" and self.hyper is None:
            raise ValueError("frozen mode needs hyperparameters")


@dataclass(frozen=True)
class JointPosterior:
    """Posterior moments of ``(f, grad f)`` and the Hessian mean at one point.

    Units follow the owning model's standardization unless ``destandardize``
    has been applied.
    """

    x: np.ndarray
    mu_f: float
    var_f: float
    mu_grad: np.ndarray
    cov_grad: np.ndarray
    cov_grad_f: np.ndarray
    mu_hess: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @property
    def dim(self) -> int:
        return self.mu_grad.shape[0]

    def stacked_cov(self) -> np.ndarray:
        """Covariance of ``[f; grad f]`` as a (d+1) x (d+1) matrix."""
        d = self.dim
        S = np.empty((d + 1, d + 1))
        S[0, 0] = self.var_f
        S[0, 1:] = self.cov_grad_f
        S[1:, 0] = self.cov_grad_f
        S[1:, 1:] = self.cov_grad
        return S

    def destandardize(self) -> "JointPosterior":
        s, m = self.y_std, self.y_mean
        return JointPosterior(
            x=self.x, mu_f=m + s * self.mu_f, var_f=s * s * self.var_f,
            mu_grad=s * self.mu_grad, cov_grad=s * s * self.cov_grad,
            cov_grad_f=s * s * self.cov_grad_f, mu_hess=s * self.mu_hess,
            y_mean=0.0, y_std=1.0,
        )

    def raw_threshold(self) -> float:
        """Standardized value corresponding to a raw value of zero."""
        return -self.y_mean / self.y_std


@dataclass(frozen=True)
class FittedGP:
    dataset: Dataset
    hyper: KernelHyperparameters
    y_mean: float
    y_std: float
    gram_cholesky: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    y_standardized: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.hyper.dim

    @property
    def n(self) -> int:
        return len(self.dataset)

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"query point must have shape ({self.dim},)")
        return x

    def posterior_f(self, x) -> tuple[float, float]:
        """Posterior mean and variance of ``f(x)`` in standardized units."""
        x = self._check_x(x)
        s2 = self.hyper.output_scale
        if self.n == 0:
            return 0.0, s2
        kx = gram(x[None, :], self.dataset.inputs, self.hyper)[0]
        mu = float(kx @ self.alpha)
        v = solve_triangular(self.gram_cholesky, kx, lower=True, check_finite=False)
        return mu, max(s2 - float(v @ v), 0.0)

    def posterior_joint(self, x) -> JointPosterior:
        x = self._check_x(x)
        d = self.dim
        s2 = self.hyper.output_scale
        inv_l2 = 1.0 / self.hyper.lengthscales**2
        if self.n == 0:
            return JointPosterior(
                x=x, mu_f=0.0, var_f=s2, mu_grad=np.zeros(d),
                cov_grad=np.diag(s2 * inv_l2), cov_grad_f=np.zeros(d),
                mu_hess=np.zeros((d, d)), y_mean=self.y_mean, y_std=self.y_std,
            )
        kvec, G, H = core.se_grad_hess_sum(
            x, self.dataset.inputs, self.alpha, self.hyper.lengthscales, float(s2)
        )
        L = self.gram_cholesky
        rhs = np.column_stack([kvec, G.T])
        V = solve_triangular(L, rhs, lower=True, check_finite=False)
        v, Vg = V[:, 0], V[:, 1:]
        cov_grad = np.diag(s2 * inv_l2) - Vg.T @ Vg
        cov_grad = 0.5 * (cov_grad + cov_grad.T)
        return JointPosterior(
            x=x,
            mu_f=float(kvec @ self.alpha),
            var_f=max(s2 - float(v @ v), 0.0),
            mu_grad=G @ self.alpha,
            cov_grad=cov_grad,
            cov_grad_f=-(Vg.T @ v),
            mu_hess=0.5 * (H + H.T),
            y_mean=self.y_mean,
            y_std=self.y_std,
        )

    def posterior_mean_cov(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        """Joint posterior of ``f`` over a batch of points (standardized units)."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Kss = gram(Xs, Xs, self.hyper)
        if self.n == 0:
            return np.zeros(len(Xs)), Kss
        Ks = gram(Xs, self.dataset.inputs, self.hyper)
        V = solve_triangular(self.gram_cholesky, Ks.T, lower=True, check_finite=False)
        cov = Kss - V.T @ V
        return Ks @ self.alpha, 0.5 * (cov + cov.T)

    def posterior_mean(self, Xs) -> np.ndarray:
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if self.n == 0:
            return np.zeros(len(Xs))
        return gram(Xs, self.dataset.inputs, self.hyper) @ self.alpha


def _gram_matrix(X, hyper: KernelHyperparameters):
    Kf = gram(X, X, hyper)
    K = Kf + hyper.noise_variance * np.eye(len(X))
    return Kf, K


def condition(dataset: Dataset, hyper: KernelHyperparameters) -> FittedGP:
    """Factorize the Gram matrix for fixed hyperparameters."""
    y, mean, std = standardize(dataset.targets)
    if len(dataset) == 0:
        return FittedGP(dataset, hyper, mean, std, np.zeros((0, 0)), np.zeros(0), 0.0, y)
    _, K = _gram_matrix(dataset.inputs, hyper)
    L, jitter = jittered_cholesky(K)
    alpha = chol_solve(L, y)
    return FittedGP(dataset, hyper, mean, std, L, alpha, jitter, y)


def log_marginal_likelihood(dataset: Dataset, hyper: KernelHyperparameters,
                            standardize_targets: bool = True) -> float:
    """Gaussian log marginal likelihood of the (standardized) targets."""
    if standardize_targets:
        y = standardize(dataset.targets)[0]
    else:
        y = dataset.targets
    n = len(y)
    _, K = _gram_matrix(dataset.inputs, hyper)
    L, _ = jittered_cholesky(K)
    alpha = chol_solve(L, y)
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI)


def _neg_mll_and_grad(theta, X, y, noise):
    d = X.shape[1]
    ls = np.exp(theta[:d])
    s2 = float(np.exp(theta[d]))
    n = len(y)
    Kf = core.ard_gram(X, X, ls, s2)
    K = Kf + noise * np.eye(n)
    try:
        L, _ = jittered_cholesky(K)
    except ModelError:
        return 1e25, np.zeros_like(theta)
    alpha = chol_solve(L, y)
    nll = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * LOG_2PI
    Kinv = chol_solve(L, np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    KW = W * Kf
    grad = np.empty_like(theta)
    grad[:d] = -0.5 * core.lengthscale_contract(X, KW) / ls**2
    grad[d] = -0.5 * KW.sum()
    return float(nll), grad


def _starts(d: int, cfg: FitConfig) -> list[np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    lo, hi = lengthscale_bounds(d)
    base = np.full(d + 1, 0.0)
    base[:d] = math.log(math.sqrt(d))
    starts = []
    if cfg.warm_start is not None:
        w = np.empty(d + 1)
        w[:d] = np.log(np.clip(cfg.warm_start.lengthscales, lo, hi))
        w[d] = math.log(np.clip(cfg.warm_start.output_scale, *OUTPUT_SCALE_BOUNDS))
        starts.append(w)
    starts.append(base)
    while len(starts) < max(cfg.n_starts, 1):
        s = base.copy()
        s[:d] = rng.uniform(math.log(0.05), math.log(hi))
        starts.append(s)
    return starts[: max(cfg.n_starts, 1)]


def fit(dataset: Dataset, config: FitConfig) -> FittedGP:
    """Fit hyperparameters (or take them frozen) and condition on the data."""
    if config.mode == "frozen" or len(dataset) < 2:
        hyper = config.hyper
        if hyper is None:
            d = dataset.dim
            hyper = KernelHyperparameters.isotropic(d, math.sqrt(d), 1.0, config.noise_variance)
        return condition(dataset, hyper)

    X = dataset.inputs
    d = X.shape[1]
    y = standardize(dataset.targets)[0]
    lo, hi = lengthscale_bounds(d)
    bounds = [(math.log(lo), math.log(hi))] * d + [tuple(map(math.log, OUTPUT_SCALE_BOUNDS))]
    best_theta, best_val = None, np.inf
    for theta0 in _starts(d, config):
        res = minimize(
            _neg_mll_and_grad, theta0, args=(X, y, config.noise_variance), jac=True,
            method="L-BFGS-B", bounds=bounds, options={"maxiter": config.maxiter},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    if best_theta is None:
        raise ModelError("marginal likelihood optimization failed", JITTER_LADDER)
    theta = np.clip(best_theta, [b[0] for b in bounds], [b[1] for b in bounds])
    hyper = KernelHyperparameters(np.exp(theta[:d]), float(np.exp(theta[d])), config.noise_variance)
    return condition(dataset, hyper)


def fit_many(datasets: Sequence[Dataset], config: FitConfig,
             warm: Optional[Sequence[Optional[KernelHyperparameters]]] = None) -> list[FittedGP]:
    """Fit one model per dataset with a shared config (objective and constraints)."""
    out = []
    for i, ds in enumerate(datasets):
        cfg = config
        if warm is not None and warm[i] is not None and config.mode == "learn":
            cfg = FitConfig(**{**config.__dict__, "warm_start": warm[i]})
        out.append(fit(ds, cfg))
    return out
