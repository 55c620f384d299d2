"""Command-line experiment runner: ``run``, ``report``, ``sweep`` and ``oracle``.

Exit codes: 0 success, 1 at least one run failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import ast
import csv
import glob as globmod
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from bayesqp.driver import Problem, RunConfig, RunTrace, random_search, run
from bayesqp.problems import REGISTRY, make_problem
from bayesqp.quasirandom import sobol

log = logging.getLogger("bayesqp")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
ALGORITHMS = ("bayesqp", "random")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# experiment specs

@dataclass
class ExperimentSpec:
    problem: str
    dim: Optional[int] = None
    problem_seed: Optional[int] = None  # None: each run seed draws its own instance
    algorithm: str = "bayesqp"
    seeds: list = field(default_factory=lambda: [0])
    overrides: dict = field(default_factory=dict)
    out: Path = Path("runs")

    def __post_init__(self):
        if self.problem not in REGISTRY:
            raise UsageError(f"unknown problem {self.problem!r}; known: {', '.join(sorted(REGISTRY))}")
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.algorithm!r}; known: {', '.join(ALGORITHMS)}")
        if not self.seeds:
            raise UsageError("seeds must be nonempty")
        known = {f.name for f in fields(RunConfig)}
        bad = set(self.overrides) - known
        if bad:
            raise UsageError(f"unknown config keys: {', '.join(sorted(bad))}")

    def trace_name(self, seed: int) -> str:
        return f"{self.problem}_{self.algorithm}_seed{seed}.csv"


def parse_seeds(text: str) -> list[int]:
    """``"4"`` means seeds 0..3; ``"1,5,9"`` is a list; ``"3-6"`` a closed range."""
    text = text.strip()
    try:
        if "," in text:
            seeds = [int(t) for t in text.split(",") if t.strip()]
        elif "-" in text[1:]:
            a, b = text.split("-", 1)
            seeds = list(range(int(a), int(b) + 1))
        else:
            n = int(text)
            if n < 1:
                raise UsageError("--seeds count must be positive")
            seeds = list(range(n))
    except ValueError as exc:
        raise UsageError(f"bad --seeds value {text!r}") from exc
    if not seeds:
        raise UsageError(f"--seeds {text!r} selects no seeds")
    if len(set(seeds)) != len(seeds):
        raise UsageError("--seeds contains duplicates")
    return seeds


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() in ("none", "null"):
        return None
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = _parse_value(value)
    return out


_FLAG_TO_FIELD = {
    "budget": "budget", "delta_f": "delta_f", "delta_c": "delta_c", "subsamples": "subsamples",
    "ls_budget": "ls_budget", "ball_radius": "ball_radius", "hyper": "hyper",
}


def _overrides(args) -> dict:
    cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    for flag, name in _FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg[name] = v
    return cfg


def _problem(spec: ExperimentSpec, seed: int) -> Problem:
    pseed = seed if spec.problem_seed is None else spec.problem_seed
    try:
        return make_problem(spec.problem, spec.dim, pseed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def execute(spec: ExperimentSpec, seed: int) -> RunTrace:
    problem = _problem(spec, seed)
    if spec.algorithm == "random":
        budget = spec.overrides.get("budget", RunConfig.budget)
        return random_search(problem, budget, seed)
    config = RunConfig(**{**spec.overrides, "seed": seed})
    return run(problem, config)


def _job(spec: ExperimentSpec, seed: int) -> dict:
    path = spec.out / spec.trace_name(seed)
    try:
        trace = execute(spec, seed)
    except UsageError:
        raise
    except Exception as exc:  # noqa: BLE001  (recorded in the manifest)
        return {"seed": seed, "file": None, "status": "error", "error": repr(exc)}
    trace.write(path)
    best = trace.best()
    return {
        "seed": seed, "file": path.name, "status": "aborted" if trace.aborted else "ok",
        "error": trace.aborted, "final_f": None if best is None else best.f,
        "final_feasible": trace.final_feasible if best is not None else False,
        "n_evaluations": len(trace.evaluations),
    }


def run_many(spec: ExperimentSpec, jobs: int = 1) -> list[dict]:
    spec.out.mkdir(parents=True, exist_ok=True)
    # validate the problem and config once up front so usage errors surface as such
    probe = _problem(spec, spec.seeds[0])
    if spec.algorithm == "bayesqp":
        try:
            RunConfig(**spec.overrides).validate(probe.dim)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid configuration: {exc}") from exc
    if jobs > 1 and len(spec.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, [spec] * len(spec.seeds), spec.seeds))
    else:
        results = [_job(spec, s) for s in spec.seeds]
    return results


def _write_manifest(path: Path, spec: ExperimentSpec, results: list[dict]):
    manifest = {
        "problem": spec.problem, "dim": spec.dim, "problem_seed": spec.problem_seed,
        "algorithm": spec.algorithm, "overrides": spec.overrides, "runs": results,
    }
    path.write_text(json.dumps(manifest, indent=1, default=str) + "\n")


# ---------------------------------------------------------------------------
# report

def quantile_summary(values: Sequence[float], lo: float = 0.05, hi: float = 0.95):
    """Median and (lo, hi) quantiles with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return (np.nan, np.nan, np.nan)
    return (float(np.quantile(v, 0.5)), float(np.quantile(v, lo)), float(np.quantile(v, hi)))


def format_cell(med, qlo, qhi, n_feasible, n_runs, digits: int = 2) -> str:
    if n_feasible == 0:
        return f"n/a (feas. 0/{n_runs})"
    flag = "*" if n_feasible < n_runs else ""
    return f"{med:.{digits}f}_{{{qlo:.{digits}f}}}^{{{qhi:.{digits}f}}}{flag} (feas. {n_feasible}/{n_runs})"


def summarize(traces: Sequence[RunTrace], lo=0.05, hi=0.95, digits=2) -> list[dict]:
    groups: dict[tuple, list[RunTrace]] = {}
    for t in traces:
        groups.setdefault((t.problem, t.algorithm), []).append(t)
    rows = []
    for (prob, algo), ts in sorted(groups.items()):
        feas = [t.final_value for t in ts if t.final_feasible]
        med, qlo, qhi = quantile_summary(feas, lo, hi)
        rows.append({
            "problem": prob, "algorithm": algo, "runs": len(ts), "feasible": len(feas),
            "median": med, "q_lo": qlo, "q_hi": qhi,
            "evaluations": int(np.median([len(t.evaluations) for t in ts])),
            "cell": format_cell(med, qlo, qhi, len(feas), len(ts), digits),
        })
    return rows


def _render_table(rows: list[dict]) -> str:
    head = ["problem", "algorithm", "evals", "final value"]
    body = [[r["problem"], r["algorithm"], str(r["evaluations"]), r["cell"]] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*b) for b in body]
    if any(r["feasible"] < r["runs"] for r in rows):
        lines.append("* quantiles over runs that found a feasible point only")
    return "\n".join(lines) + "\n"


def _collect(patterns: Sequence[str]) -> list[Path]:
    paths = []
    for p in patterns:
        if Path(p).is_dir():
            matches = globmod.glob(str(Path(p) / "*.csv"))
        else:
            matches = globmod.glob(p)
        paths.extend(sorted(matches))
    return [Path(p) for p in dict.fromkeys(paths) if p.endswith(".csv")]


# ---------------------------------------------------------------------------
# oracle

@dataclass
class LocalOptimum:
    x: list
    f: float
    feasible: bool


def _feasible_value(problem: Problem, x) -> tuple[float, bool]:
    f, c = problem.evaluate(x)
    return f, bool(np.all(c >= 0))


def _refine(problem: Problem, x0) -> Optional[LocalOptimum]:
    """SLSQP polish in the box; ``None`` when it does not end at a feasible KKT point."""
    cons = [{"type": "ineq", "fun": g} for g in problem.constraints]
    bounds = list(zip(problem.lower, problem.upper))
    try:
        res = minimize(problem.objective, x0, method="SLSQP", bounds=bounds, constraints=cons,
                       options={"maxiter": 200, "ftol": 1e-12})
    except (ValueError, ArithmeticError):
        return None
    if not res.success:
        return None
    x = np.clip(res.x, problem.lower, problem.upper)
    f, c = problem.evaluate(x)
    if not np.all(c >= -1e-9):
        return None
    return LocalOptimum(x.tolist(), f, True)


def _dedupe(optima: list[LocalOptimum], problem: Problem, tol=1e-2) -> list[LocalOptimum]:
    span = problem.upper - problem.lower
    kept: list[LocalOptimum] = []
    for o in sorted(optima, key=lambda o: (not o.feasible, o.f)):
        u = (np.asarray(o.x) - problem.lower) / span
        if all(np.linalg.norm(u - (np.asarray(k.x) - problem.lower) / span) > tol for k in kept):
            kept.append(o)
    return kept


def grid_local_minima(problem: Problem, resolution: int) -> tuple[LocalOptimum, list[np.ndarray]]:
    """Dense-grid oracle for d <= 3: best feasible grid point and discrete local minima.

    A feasible grid point is a discrete local minimum when no feasible
    neighbor (in the full 3^d - 1 stencil) has a smaller objective.
    """
    d = problem.dim
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(problem.lower, problem.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    F = np.array([problem.objective(p) for p in pts]).reshape((resolution,) * d)
    feas = np.ones(F.shape, dtype=bool)
    for g in problem.constraints:
        feas &= np.array([g(p) for p in pts]).reshape(F.shape) >= 0
    if not feas.any():
        raise RuntimeError("no feasible grid point")
    Fm = np.where(feas, F, np.inf)
    padded = np.pad(Fm, 1, constant_values=np.inf)
    is_min = feas.copy()
    for offset in np.ndindex(*(3,) * d):
        if all(o == 1 for o in offset):
            continue
        sl = tuple(slice(o, o + resolution) for o in offset)
        is_min &= Fm <= padded[sl]
    flat = int(np.argmin(Fm))
    best = LocalOptimum(pts[flat].tolist(), float(Fm.ravel()[flat]), True)
    minima = [pts[i] for i in np.flatnonzero(is_min.ravel())]
    return best, minima


def oracle(problem: Problem, resolution: int = 2001, n_starts: int = 1024, top: int = 10) -> dict:
    """Best feasible point plus up to ``top`` distinct local optima."""
    if problem.dim <= 3:
        best, minima = grid_local_minima(problem, resolution)
        # the grid holds many staircase minima along curved boundaries; polish and merge
        order = sorted(minima, key=lambda p: problem.objective(p))[: max(50 * top, 200)]
        optima = [o for o in (_refine(problem, p) for p in order) if o is not None]
        optima.append(best)
        method = f"grid {resolution}^{problem.dim} + SLSQP polish"
    else:
        U = sobol(problem.dim, n_starts, skip=1)
        optima = [o for o in (_refine(problem, problem.to_raw(u)) for u in U) if o is not None]
        method = f"{n_starts} Sobol starts + SLSQP"
    optima = [o for o in _dedupe(optima, problem) if o.feasible]
    if not optima:
        raise RuntimeError("oracle found no feasible point")
    return {
        "problem": problem.name, "dim": problem.dim, "method": method,
        "best": asdict(optima[0]), "local_optima": [asdict(o) for o in optima[:top]],
    }


# ---------------------------------------------------------------------------
# sweep

SWEEP_AXES = {"delta": ("delta_f", "delta_c"), "km": ("subsamples", "ls_budget")}


def _floats(text: str, cast=float) -> list:
    try:
        vals = [cast(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad grid values {text!r}") from exc
    if not vals:
        raise UsageError("grid must be nonempty")
    return vals


def sweep(base: ExperimentSpec, axes: str, rows: list, cols: list, jobs: int = 1) -> dict:
    rname, cname = SWEEP_AXES[axes]
    cells = []
    failed = False
    for rv in rows:
        for cv in cols:
            over = {**base.overrides, rname: rv, cname: cv}
            sub = ExperimentSpec(base.problem, base.dim, base.problem_seed, base.algorithm,
                                 base.seeds, over, base.out / f"{rname}={rv}_{cname}={cv}")
            results = run_many(sub, jobs)
            failed |= any(r["status"] != "ok" for r in results)
            vals = [r["final_f"] for r in results if r["status"] == "ok" and r["final_feasible"]]
            cells.append({"row": rv, "col": cv, "runs": len(results), "feasible": len(vals),
                          "median": float(np.median(vals)) if vals else float("nan")})
    return {"row_axis": rname, "col_axis": cname, "rows": rows, "cols": cols, "cells": cells,
            "failed": failed}


def _write_sweep(result: dict, path: Path):
    rname, cname = result["row_axis"], result["col_axis"]
    lookup = {(c["row"], c["col"]): c["median"] for c in result["cells"]}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{rname}\\{cname}"] + [repr(c) for c in result["cols"]])
        for rv in result["rows"]:
            w.writerow([repr(rv)] + [repr(lookup[(rv, cv)]) for cv in result["cols"]])
        if rname == "delta_f" and 0.5 in result["rows"] and 0.5 in result["cols"]:
            fh.write("# cell delta_f=0.5, delta_c=0.5 equals the expected-value subproblem\n")


# ---------------------------------------------------------------------------
# argument parsing

def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--problem", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--problem-seed", type=int, help="fix the within-model draw across run seeds")
    p.add_argument("--algo", default="bayesqp", choices=ALGORITHMS)
    p.add_argument("--seeds", default="1", help="count N (seeds 0..N-1), list a,b,c or range a-b")
    p.add_argument("--budget", type=int)
    p.add_argument("--delta-f", type=float)
    p.add_argument("--delta-c", type=float)
    p.add_argument("--subsamples", type=int)
    p.add_argument("--ls-budget", type=int)
    p.add_argument("--ball-radius", type=float)
    p.add_argument("--hyper", choices=("frozen", "learn"))
    p.add_argument("--config", help="file of 'key = value' lines; flags take precedence")
    p.add_argument("--out", default="runs")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesqp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run seeded experiments and write traces")
    _add_run_flags(p)

    p = sub.add_parser("report", help="aggregate traces into quantile tables")
    p.add_argument("traces", nargs="+", help="trace CSV files, globs or directories")
    p.add_argument("--quantiles", type=float, nargs=2, default=(0.05, 0.95), metavar=("LO", "HI"))
    p.add_argument("--digits", type=int, default=2)
    p.add_argument("--out", default="report", help="output prefix for .csv and .txt")

    p = sub.add_parser("sweep", help="median final value over a 2-D parameter grid")
    _add_run_flags(p)
    p.add_argument("--axes", choices=sorted(SWEEP_AXES), default="delta")
    p.add_argument("--rows", required=True, help="comma-separated row values")
    p.add_argument("--cols", required=True, help="comma-separated column values")

    p = sub.add_parser("oracle", help="estimate the optimum by grid or multi-start search")
    p.add_argument("--problem", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--problem-seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=2001)
    p.add_argument("--starts", type=int, default=1024)
    p.add_argument("--out", help="JSON output path (stdout when omitted)")
    return parser


def _spec_from_args(args) -> ExperimentSpec:
    return ExperimentSpec(args.problem, args.dim, args.problem_seed, args.algo,
                          parse_seeds(args.seeds), _overrides(args), Path(args.out))


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    results = run_many(spec, args.jobs)
    _write_manifest(spec.out / f"{spec.problem}_{spec.algorithm}_manifest.json", spec, results)
    bad = [r for r in results if r["status"] != "ok"]
    for r in results:
        print(f"seed {r['seed']}: {r['status']} f={r.get('final_f')} feasible={r.get('final_feasible')}")
    return EXIT_FAILURE if bad else EXIT_OK


def cmd_report(args) -> int:
    paths = _collect(args.traces)
    if not paths:
        raise UsageError("no traces matched")
    traces = [RunTrace.read(p) for p in paths]
    rows = summarize(traces, *args.quantiles, digits=args.digits)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.with_suffix(".csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    table = _render_table(rows)
    out.with_suffix(".txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    cast = float if args.axes == "delta" else int
    result = sweep(spec, args.axes, _floats(args.rows, cast), _floats(args.cols, cast), args.jobs)
    spec.out.mkdir(parents=True, exist_ok=True)
    _write_sweep(result, spec.out / "sweep.csv")
    (spec.out / "sweep.json").write_text(json.dumps(result, indent=1) + "\n")
    print((spec.out / "sweep.csv").read_text(), end="")
    return EXIT_FAILURE if result["failed"] else EXIT_OK


def cmd_oracle(args) -> int:
    if args.problem not in REGISTRY:
        raise UsageError(f"unknown problem {args.problem!r}; known: {', '.join(sorted(REGISTRY))}")
    try:
        problem = make_problem(args.problem, args.dim, args.problem_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    result = oracle(problem, args.resolution, args.starts)
    text = json.dumps(result, indent=1) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "report": cmd_report, "sweep": cmd_sweep, "oracle": cmd_oracle}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bayesqp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
