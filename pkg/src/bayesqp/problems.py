"""Benchmark problems and a name registry.

Constraints follow the ``c_i(x) >= 0`` convention throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from bayesqp.driver import Problem

RFF_FEATURES = 1028
RFF_LENGTHSCALE = 0.1


@dataclass(frozen=True)
class RFFSample:
    """Random Fourier feature approximation of an SE-kernel GP prior draw."""

    weights: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    lengthscale: float

    @property
    def n_features(self) -> int:
        return self.weights.size

    @classmethod
    def draw(cls, d: int, rng, lengthscale: float = RFF_LENGTHSCALE,
             n_features: int = RFF_FEATURES) -> "RFFSample":
        w = rng.standard_normal(n_features)
        theta = rng.standard_normal((n_features, d)) / lengthscale
        tau = rng.uniform(0.0, 2.0 * math.pi, n_features)
        for a in (w, theta, tau):
            a.setflags(write=False)
        return cls(w, theta, tau, lengthscale)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        scale = math.sqrt(2.0 / self.n_features)
        return float(scale * (self.weights @ np.cos(self.frequencies @ x + self.phases)))

    def batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scale = math.sqrt(2.0 / self.n_features)
        return scale * (np.cos(X @ self.frequencies.T + self.phases) @ self.weights)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        scale = math.sqrt(2.0 / self.n_features)
        s = np.sin(self.frequencies @ x + self.phases)
        return -scale * (self.weights * s) @ self.frequencies


def make_within_model(d: int, seed: int = 0, constrained: bool = False,
                      lengthscale: float = RFF_LENGTHSCALE,
                      n_features: int = RFF_FEATURES) -> Problem:
    """Objective (and optionally one constraint ``c = c_hat - 1``) drawn from the SE prior."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng([seed, d])
    f = RFFSample.draw(d, rng, lengthscale, n_features)
    cons = []
    if constrained:
        c_hat = RFFSample.draw(d, rng, lengthscale, n_features)
        cons.append(_Shifted(c_hat, -1.0))
    name = "within-model-constrained" if constrained else "within-model"
    return Problem(name, d, f, cons, np.zeros(d), np.ones(d))


@dataclass(frozen=True)
class _Shifted:
    base: Callable
    shift: float

    def __call__(self, x) -> float:
        return self.base(x) + self.shift


# ---------------------------------------------------------------------------
# Ackley

def ackley_value(x, a: float = 20.0, b: float = 0.2, c: float = 2.0 * math.pi) -> float:
    x = np.asarray(x, dtype=float)
    d = x.size
    t1 = -a * math.exp(-b * math.sqrt(float(x @ x) / d))
    t2 = -math.exp(float(np.cos(c * x).sum()) / d)
    return t1 + t2 + a + math.e


def _neg_sum(x) -> float:
    return -float(np.sum(x))


def _ball5(x) -> float:
    return 5.0 - float(np.linalg.norm(x))


def ackley(d: int, constrained: bool = False) -> Problem:
    if d < 1:
        raise ValueError("d must be >= 1")
    cons = [_neg_sum, _ball5] if constrained else []
    name = "ackley-constrained" if constrained else "ackley"
    return Problem(name, d, ackley_value, cons, np.full(d, -5.0), np.full(d, 10.0), optimum=0.0)


# ---------------------------------------------------------------------------
# Hartmann 6

HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
HARTMANN_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN_MINIMIZER = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
HARTMANN_OPTIMUM = -3.32237
for _a in (HARTMANN_ALPHA, HARTMANN_A, HARTMANN_P, HARTMANN_MINIMIZER):
    _a.setflags(write=False)


def hartmann6_value(x) -> float:
    x = np.asarray(x, dtype=float)
    inner = (HARTMANN_A * (x[None, :] - HARTMANN_P) ** 2).sum(1)
    return -float(HARTMANN_ALPHA @ np.exp(-inner))


def _unit_ball(x) -> float:
    x = np.asarray(x, dtype=float)
    return 1.0 - float(x @ x)


def hartmann6(constrained: bool = False) -> Problem:
    cons = [_unit_ball] if constrained else []
    name = "hartmann6-constrained" if constrained else "hartmann6"
    return Problem(name, 6, hartmann6_value, cons, np.zeros(6), np.ones(6),
                   optimum=HARTMANN_OPTIMUM)


# ---------------------------------------------------------------------------
# Gramacy toy problem

def gramacy_objective(x) -> float:
    return float(x[0] + x[1])


def gramacy_c1(x) -> float:
    x1, x2 = float(x[0]), float(x[1])
    return -(1.5 - x1 - 2.0 * x2 - 0.5 * math.sin(2.0 * math.pi * (x1 * x1 - 2.0 * x2)))


def gramacy_c2(x) -> float:
    x1, x2 = float(x[0]), float(x[1])
    return -(x1 * x1 + x2 * x2 - 1.5)


def gramacy() -> Problem:
    return Problem("gramacy", 2, gramacy_objective, [gramacy_c1, gramacy_c2],
                   np.zeros(2), np.ones(2), optimum=0.5998)


# ---------------------------------------------------------------------------
# Speed reducer

SPEED_REDUCER_LOWER = np.array([2.6, 0.7, 17.0, 7.3, 7.8, 2.9, 5.0])
SPEED_REDUCER_UPPER = np.array([3.6, 0.8, 28.0, 8.3, 8.3, 3.9, 5.5])


def speed_reducer_weight(x) -> float:
    x1, x2, x3, x4, x5, x6, x7 = (float(v) for v in x)
    return (0.7854 * x1 * x2 ** 2 * (3.3333 * x3 ** 2 + 14.9334 * x3 - 43.0934)
            - 1.508 * x1 * (x6 ** 2 + x7 ** 2)
            + 7.4777 * (x6 ** 3 + x7 ** 3)
            + 0.7854 * (x4 * x6 ** 2 + x5 * x7 ** 2))


def speed_reducer_g(x) -> np.ndarray:
    """The eleven design constraints in ``g(x) <= 0`` form."""
    x1, x2, x3, x4, x5, x6, x7 = (float(v) for v in x)
    return np.array([
        27.0 / (x1 * x2 ** 2 * x3) - 1.0,
        397.5 / (x1 * x2 ** 2 * x3 ** 2) - 1.0,
        1.93 * x4 ** 3 / (x2 * x3 * x6 ** 4) - 1.0,
        1.93 * x5 ** 3 / (x2 * x3 * x7 ** 4) - 1.0,
        math.sqrt((745.0 * x4 / (x2 * x3)) ** 2 + 16.9e6) / (110.0 * x6 ** 3) - 1.0,
        math.sqrt((745.0 * x5 / (x2 * x3)) ** 2 + 157.5e6) / (85.0 * x7 ** 3) - 1.0,
        x2 * x3 / 40.0 - 1.0,
        5.0 * x2 / x1 - 1.0,
        x1 / (12.0 * x2) - 1.0,
        (1.5 * x6 + 1.9) / x4 - 1.0,
        (1.1 * x7 + 1.9) / x5 - 1.0,
    ])


@dataclass(frozen=True)
class _SpeedReducerConstraint:
    index: int

    def __call__(self, x) -> float:
        return -float(speed_reducer_g(x)[self.index])


def speed_reducer() -> Problem:
    cons = [_SpeedReducerConstraint(i) for i in range(11)]
    return Problem("speed-reducer", 7, speed_reducer_weight, cons,
                   SPEED_REDUCER_LOWER.copy(), SPEED_REDUCER_UPPER.copy(), optimum=2996.35)


# ---------------------------------------------------------------------------
# Registry

DEFAULT_DIMS = {"within-model": 2, "within-model-constrained": 2, "ackley": 5,
                "ackley-constrained": 5}

REGISTRY: dict[str, Callable[..., Problem]] = {
    "within-model": lambda dim, seed: make_within_model(dim, seed, constrained=False),
    "within-model-constrained": lambda dim, seed: make_within_model(dim, seed, constrained=True),
    "ackley": lambda dim, seed: ackley(dim, constrained=False),
    "ackley-constrained": lambda dim, seed: ackley(dim, constrained=True),
    "hartmann6": lambda dim, seed: hartmann6(False),
    "hartmann6-constrained": lambda dim, seed: hartmann6(True),
    "gramacy": lambda dim, seed: gramacy(),
    "speed-reducer": lambda dim, seed: speed_reducer(),
}

FIXED_DIMS = {"hartmann6": 6, "hartmann6-constrained": 6, "gramacy": 2, "speed-reducer": 7}


def make_problem(name: str, dim: int | None = None, seed: int = 0) -> Problem:
    """Build a registered problem; ``seed`` only affects the within-model draws."""
    if name not in REGISTRY:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(sorted(REGISTRY))}")
    if name in FIXED_DIMS:
        if dim is not None and dim != FIXED_DIMS[name]:
            raise ValueError(f"{name} has fixed dimension {FIXED_DIMS[name]}")
        dim = FIXED_DIMS[name]
    elif dim is None:
        dim = DEFAULT_DIMS[name]
    return REGISTRY[name](dim, seed)
