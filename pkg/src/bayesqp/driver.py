"""The BayeSQP outer loop, the random-search baseline and trace serialization.

One query evaluates the objective and every constraint at the same point and
costs one unit of budget. All modeling happens in the unit cube on
standardized targets; oracles see raw coordinates and traces store raw values.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from bayesqp.kernel import KernelHyperparameters
from bayesqp.linesearch import EvaluatedPoint, Segment, incumbent_key, thompson_select
from bayesqp.quasirandom import SobolStream, ball_samples
from bayesqp.subproblem import (
    LocalModelSet,
    SubproblemConfig,
    SubproblemError,
    Variant,
    solve_direction,
)
from bayesqp.surrogate import Dataset, FitConfig, fit

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    """An oracle returned a non-finite value."""


@dataclass
class Problem:
    """Objective and constraints (feasible when ``c_i(x) >= 0``) on a box."""

    name: str
    dim: int
    objective: Callable[[np.ndarray], float]
    constraints: Sequence[Callable[[np.ndarray], float]]
    lower: np.ndarray
    upper: np.ndarray
    noise_std: float = 0.0
    constraint_noise_std: Optional[Sequence[float]] = None
    optimum: Optional[float] = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(self.dim)
        self.upper = np.asarray(self.upper, dtype=float).reshape(self.dim)
        if np.any(self.lower >= self.upper):
            raise ValueError("need lower < upper in every dimension")
        self.constraints = list(self.constraints)
        if self.constraint_noise_std is None:
            self.constraint_noise_std = [0.0] * len(self.constraints)
        if len(self.constraint_noise_std) != len(self.constraints):
            raise ValueError("one noise level per constraint")

    @property
    def m(self) -> int:
        return len(self.constraints)

    def to_raw(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def evaluate(self, x, rng=None) -> tuple[float, np.ndarray]:
        """Evaluate all oracles at raw point ``x``, adding configured noise."""
        x = np.asarray(x, dtype=float)
        f = float(self.objective(x))
        c = np.array([float(g(x)) for g in self.constraints])
        if rng is not None:
            if self.noise_std > 0:
                f += self.noise_std * rng.standard_normal()
            for i, s in enumerate(self.constraint_noise_std):
                if s > 0:
                    c[i] += s * rng.standard_normal()
        if not (math.isfinite(f) and np.all(np.isfinite(c))):
            raise OracleError(f"non-finite oracle output at x={x.tolist()}: f={f}, c={c.tolist()}")
        return f, c


@dataclass
class RunConfig:
    budget: int = 100
    subsamples: Optional[int] = None  # K, default d + 1
    ls_budget: int = 3  # M
    ls_candidates: int = 100  # N
    ball_radius: float = 0.05
    delta_f: float = 0.2
    delta_c: float = 0.2
    delta_f_infeasible: float = 0.5
    slack_penalty: float = 100.0
    clip_eps: float = 1e-5
    hyper: str = "learn"
    lengthscale: Optional[float] = None  # frozen mode; default sqrt(d)
    output_scale: float = 1.0
    noise_variance: float = 1e-4
    seed: int = 0
    x0: Optional[Sequence[float]] = None  # raw start point, random when None
    unconstrained_variant: str = Variant.UNCONSTRAINED_ROBUST.value
    fit_starts: int = 4
    fit_maxiter: int = 100

    def k_for(self, d: int) -> int:
        return self.subsamples if self.subsamples is not None else d + 1

    def validate(self, d: int):
        K = self.k_for(d)
        if K < 1 or self.ls_budget < 1:
            raise ValueError("K and M must be positive")
        if self.budget < K + self.ls_budget:
            raise ValueError(f"budget {self.budget} < K + M = {K + self.ls_budget}")
        if self.hyper not in ("frozen", "learn"):
            raise ValueError("hyper must be 'frozen' or 'learn'")
        if self.ls_candidates <= self.ls_budget:
            raise ValueError("need more line-search candidates than M")
        if self.ball_radius <= 0:
            raise ValueError("ball_radius must be positive")


@dataclass
class EvalRecord:
    index: int
    phase: str
    x: list
    f: float
    c: list
    best_f: float
    best_feasible: bool
    iteration: int


@dataclass
class IterationRecord:
    iteration: int
    x: list
    step_norm: float
    used_fallback: bool
    status: str
    incumbent_f: float
    incumbent_feasible: bool
    delta_f: float
    joint_sampling: bool = True
    direction: list = field(default_factory=list)
    multipliers: list = field(default_factory=list)
    seconds: dict = field(default_factory=dict)


@dataclass
class RunTrace:
    problem: str
    algorithm: str
    dim: int
    m: int
    config: dict
    evaluations: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    aborted: Optional[str] = None

    # -- derived views ------------------------------------------------------
    def best(self) -> EvalRecord:
        best, key = None, None
        for r in self.evaluations:
            k = incumbent_key(r.f, r.c)
            if key is None or k < key:
                best, key = r, k
        return best

    @property
    def final_value(self) -> float:
        return self.best().f

    @property
    def final_feasible(self) -> bool:
        return bool(np.all(np.asarray(self.best().c) >= 0))

    def best_curve(self) -> np.ndarray:
        return np.array([r.best_f for r in self.evaluations])

    # -- serialization -------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["eval_index", "phase"] + [f"x_{i + 1}" for i in range(self.dim)] + ["f"]
        header += [f"c_{i + 1}" for i in range(self.m)] + ["best_f", "best_feasible"]
        w.writerow(header)
        for r in self.evaluations:
            w.writerow([r.index, r.phase] + [repr(float(v)) for v in r.x] + [repr(float(r.f))]
                       + [repr(float(v)) for v in r.c] + [repr(float(r.best_f)), int(r.best_feasible)])
        return buf.getvalue()

    def sidecar(self) -> dict:
        best = self.best()
        return {
            "problem": self.problem,
            "algorithm": self.algorithm,
            "dim": self.dim,
            "m": self.m,
            "config": self.config,
            # wall-clock timers stay in memory so files on disk are reproducible
            "iterations": [{k: v for k, v in asdict(r).items() if k != "seconds"}
                           for r in self.iterations],
            "final": None if best is None else {
                "eval_index": best.index, "x": best.x, "f": best.f, "c": best.c,
                "feasible": self.final_feasible,
            },
            "n_evaluations": len(self.evaluations),
            "aborted": self.aborted,
        }

    def write(self, csv_path, json_path=None):
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv())
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        json_path.write_text(json.dumps(self.sidecar(), indent=1, default=_json_default) + "\n")

    @classmethod
    def read(cls, csv_path, json_path=None) -> "RunTrace":
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        meta = json.loads(json_path.read_text())
        trace = cls(meta["problem"], meta["algorithm"], meta["dim"], meta["m"], meta["config"],
                    aborted=meta.get("aborted"))
        d, m = meta["dim"], meta["m"]
        with csv_path.open() as fh:
            rows = list(csv.reader(fh))
        for row in rows[1:]:
            vals = row[2:]
            x = [float(v) for v in vals[:d]]
            f = float(vals[d])
            c = [float(v) for v in vals[d + 1:d + 1 + m]]
            trace.evaluations.append(EvalRecord(
                int(row[0]), row[1], x, f, c, float(vals[d + 1 + m]),
                bool(int(vals[d + 2 + m])), -1))
        for it in meta.get("iterations", []):
            trace.iterations.append(IterationRecord(**it))
        return trace


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o)}")


class _Recorder:
    """Owns the evaluation log, datasets and budget for one run."""

    def __init__(self, problem: Problem, budget: int, trace: RunTrace, rng):
        self.problem = problem
        self.budget = budget
        self.trace = trace
        self.rng = rng
        self.U: list[np.ndarray] = []
        self.F: list[float] = []
        self.C: list[np.ndarray] = []
        self.best_key = None
        self.best_f = math.nan
        self.best_feasible = False
        self.any_feasible = False

    @property
    def remaining(self) -> int:
        return self.budget - len(self.U)

    def evaluate(self, u, phase: str, iteration: int) -> EvaluatedPoint:
        if self.remaining <= 0:
            raise RuntimeError("evaluation budget exhausted")
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        x = self.problem.to_raw(u)
        f, c = self.problem.evaluate(x, self.rng)
        self.U.append(u)
        self.F.append(f)
        self.C.append(c)
        key = incumbent_key(f, c)
        if self.best_key is None or key < self.best_key:
            self.best_key = key
            self.best_f = f
            self.best_feasible = key[0] == 0
        self.any_feasible = self.any_feasible or bool(np.all(c >= 0))
        self.trace.evaluations.append(EvalRecord(
            index=len(self.U) - 1, phase=phase, x=x.tolist(), f=f, c=c.tolist(),
            best_f=self.best_f, best_feasible=self.best_feasible, iteration=iteration))
        return EvaluatedPoint(u, f, c, iteration)

    def datasets(self) -> list[Dataset]:
        X = np.array(self.U)
        out = [Dataset(X, np.array(self.F))]
        C = np.array(self.C).reshape(len(self.U), -1)
        for i in range(self.problem.m):
            out.append(Dataset(X, C[:, i]))
        return out


def _fit_config(config: RunConfig, d: int, iteration: int) -> FitConfig:
    if config.hyper == "frozen":
        ls = config.lengthscale if config.lengthscale is not None else math.sqrt(d)
        hyper = KernelHyperparameters.isotropic(d, ls, config.output_scale, config.noise_variance)
        return FitConfig(mode="frozen", hyper=hyper, noise_variance=config.noise_variance)
    return FitConfig(mode="learn", noise_variance=config.noise_variance, n_starts=config.fit_starts,
                     maxiter=config.fit_maxiter, seed=config.seed * 100003 + iteration)


def run(problem: Problem, config: RunConfig) -> RunTrace:
    """Run BayeSQP until the evaluation budget is spent."""
    d, m = problem.dim, problem.m
    config.validate(d)
    K, M = config.k_for(d), config.ls_budget
    rng = np.random.default_rng(config.seed)
    # one Thompson stream per model so constraints do not perturb objective draws
    ts_rngs = [np.random.default_rng([config.seed, 1, j]) for j in range(m + 1)]
    trace = RunTrace(problem.name, "bayesqp", d, m, asdict(config))
    rec = _Recorder(problem, config.budget, trace, rng)
    # index 0 maps to the ball center itself, which would duplicate x_t
    stream = SobolStream(d + 1, index=1)
    multipliers = np.zeros(m)
    warm = [None] * (m + 1)

    try:
        u0 = problem.to_unit(config.x0) if config.x0 is not None else rng.uniform(size=d)
        current = rec.evaluate(u0, "init", 0)
        it = 0
        extra = 0
        while rec.remaining > 0:
            it += 1
            timers = {}
            t0 = time.perf_counter()
            n_sub = min(K + extra, rec.remaining)
            extra = 0
            for u in ball_samples(current.x, config.ball_radius, n_sub, stream):
                rec.evaluate(u, "subsample", it)
            timers["subsample"] = time.perf_counter() - t0
            if rec.remaining <= 0:
                break

            t0 = time.perf_counter()
            fcfg = _fit_config(config, d, it)
            gps = []
            for j, ds in enumerate(rec.datasets()):
                cfg = fcfg
                if fcfg.mode == "learn" and warm[j] is not None:
                    cfg = FitConfig(**{**fcfg.__dict__, "warm_start": warm[j]})
                gps.append(fit(ds, cfg))
            warm = [g.hyper for g in gps]
            timers["fit"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            posts = [g.posterior_joint(current.x) for g in gps]
            models = LocalModelSet(posts[0], posts[1:])
            delta_f = config.delta_f if rec.any_feasible else config.delta_f_infeasible
            variant = Variant.ROBUST if m else Variant(config.unconstrained_variant)
            sub_cfg = SubproblemConfig(delta_f=delta_f, delta_c=config.delta_c, variant=variant,
                                       slack_penalty=config.slack_penalty, clip_eps=config.clip_eps,
                                       step_lower=-current.x, step_upper=1.0 - current.x)
            try:
                direction = solve_direction(models, multipliers, sub_cfg)
                p = direction.p
                status, fallback = direction.status.value, direction.used_fallback
                multipliers = direction.multipliers
            except SubproblemError as exc:
                log.info("iteration %d: %s", it, exc)
                p = np.zeros(d)
                status, fallback = "Failed", True
                multipliers = np.zeros(m)
            timers["subproblem"] = time.perf_counter() - t0

            step_norm = float(np.linalg.norm(p))
            joint = True
            t0 = time.perf_counter()
            if step_norm < 1e-12:
                extra = M
            else:
                n_ls = min(M, rec.remaining)
                seg = Segment(current.x, p, config.ls_candidates)
                pick = thompson_select(gps[0], gps[1:], seg, n_ls, ts_rngs)
                joint = pick.joint
                candidates = [current]
                for u in pick.points:
                    candidates.append(rec.evaluate(u, "linesearch", it))
                best = min(range(len(candidates)),
                           key=lambda i: (incumbent_key(candidates[i].f, candidates[i].c), i))
                current = candidates[best]
            timers["linesearch"] = time.perf_counter() - t0

            trace.iterations.append(IterationRecord(
                iteration=it, x=problem.to_raw(current.x).tolist(), step_norm=step_norm,
                used_fallback=fallback, status=status, incumbent_f=rec.best_f,
                incumbent_feasible=rec.best_feasible, delta_f=delta_f, joint_sampling=joint,
                direction=p.tolist(), multipliers=np.asarray(multipliers).tolist(),
                seconds=timers))
    except OracleError as exc:
        trace.aborted = str(exc)
    return trace


def random_search(problem: Problem, budget: int, seed: int = 0) -> RunTrace:
    """Uniform random evaluations in the box, same trace format as :func:`run`."""
    rng = np.random.default_rng(seed)
    trace = RunTrace(problem.name, "random", problem.dim, problem.m,
                     {"budget": budget, "seed": seed})
    rec = _Recorder(problem, budget, trace, rng)
    try:
        for _ in range(budget):
            rec.evaluate(rng.uniform(size=problem.dim), "random", 0)
    except OracleError as exc:
        trace.aborted = str(exc)
    return trace
