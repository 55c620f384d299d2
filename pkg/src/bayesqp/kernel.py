"""Squared-exponential ARD kernel and the derivative blocks of the joint prior.

All functions act on single points. With ``r = x - x2`` and
``Lambda = diag(lengthscales**2)``:

    k(x, x2)            = s2 * exp(-0.5 * r' Lambda^-1 r)
    d/dx k              = -k * Lambda^-1 r
    d2/(dx dx2) k       =  k * (Lambda^-1 - Lambda^-1 r r' Lambda^-1)
    d2/dx2 k            =  k * (Lambda^-1 r r' Lambda^-1 - Lambda^-1)

Third and fourth derivative tensors are never formed; only the Hessian mean
of the posterior is used downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bayesqp._backend import core

LENGTHSCALE_MIN = 1e-3


def lengthscale_bounds(d: int) -> tuple[float, float]:
    """Box for each lengthscale in normalized input units."""
    return LENGTHSCALE_MIN, 2.0 * d


@dataclass(frozen=True)
class KernelHyperparameters:
    """Hyperparameters of the scaled SE kernel plus Gaussian observation noise."""

    lengthscales: np.ndarray
    output_scale: float = 1.0
    noise_variance: float = 1e-4

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a nonempty vector")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if not self.output_scale > 0:
            raise ValueError(f"output_scale must be positive, got {self.output_scale}")
        if not self.noise_variance >= 0:
            raise ValueError(f"noise_variance must be nonnegative, got {self.noise_variance}")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    @classmethod
    def isotropic(cls, d: int, lengthscale: float, output_scale: float = 1.0,
                  noise_variance: float = 1e-4) -> "KernelHyperparameters":
        return cls(np.full(d, float(lengthscale)), output_scale, noise_variance)

    def within_bounds(self) -> bool:
        lo, hi = lengthscale_bounds(self.dim)
        return bool(np.all(self.lengthscales >= lo) and np.all(self.lengthscales <= hi))


def _diff(x, x2, hyper: KernelHyperparameters):
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != (hyper.dim,) or x2.shape != (hyper.dim,):
        raise ValueError(
            f"points must have shape ({hyper.dim},), got {x.shape} and {x2.shape}"
        )
    return x - x2


def eval_k(x, x2, hyper: KernelHyperparameters) -> float:
    r = _diff(x, x2, hyper)
    z = r / hyper.lengthscales
    return float(hyper.output_scale * np.exp(-0.5 * np.dot(z, z)))


def grad_k(x, x2, hyper: KernelHyperparameters) -> np.ndarray:
    """Gradient of ``k(x, x2)`` with respect to the first argument."""
    r = _diff(x, x2, hyper)
    return -eval_k(x, x2, hyper) * r / hyper.lengthscales**2


def cross_hess_k(x, x2, hyper: KernelHyperparameters) -> np.ndarray:
    """Mixed derivative, i.e. the prior covariance ``Cov[grad f(x), grad f(x2)]``."""
    r = _diff(x, x2, hyper)
    inv_l2 = 1.0 / hyper.lengthscales**2
    u = r * inv_l2
    return eval_k(x, x2, hyper) * (np.diag(inv_l2) - np.outer(u, u))


def hess_k(x, x2, hyper: KernelHyperparameters) -> np.ndarray:
    """Hessian of ``k(x, x2)`` with respect to the first argument."""
    return -cross_hess_k(x, x2, hyper)


def gram(X1, X2, hyper: KernelHyperparameters) -> np.ndarray:
    """Cross-covariance matrix ``k(X1, X2)`` (no noise term)."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != hyper.dim or X2.shape[1] != hyper.dim:
        raise ValueError("input dimension does not match lengthscales")
    return core.ard_gram(X1, X2, hyper.lengthscales, float(hyper.output_scale))
