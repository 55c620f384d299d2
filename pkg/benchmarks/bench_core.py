"""Compare the compiled kernel core with the numpy fallback.

Usage::

    python3 benchmarks/bench_core.py [--repeat 20] [--end-to-end]

Each kernel is timed on the same inputs in both backends; the table reports
the best-of-``repeat`` time per call and the speedup. ``--end-to-end`` also
times a short BayeSQP run in a subprocess per backend, since the backend is
fixed at import.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from bayesqp import _pycore
from bayesqp.quasirandom import direction_numbers

try:
    from bayesqp import _ccore
except ImportError:  # extension not built
    _ccore = None


def cases(rng):
    out = {}
    for n, d in ((50, 4), (300, 16)):
        X = rng.uniform(size=(n, d))
        ls = rng.uniform(0.1, 1.0, d)
        W = rng.normal(size=(n, n))
        W = W + W.T
        x, alpha = rng.uniform(size=d), rng.normal(size=n)
        out[f"ard_gram n={n} d={d}"] = ("ard_gram", (X, X, ls, 1.3))
        out[f"lengthscale_contract n={n} d={d}"] = ("lengthscale_contract", (X, W))
        out[f"se_grad_hess_sum n={n} d={d}"] = ("se_grad_hess_sum", (x, X, alpha, ls, 1.3))
    out["sobol_block 4096 x 17"] = ("sobol_block", (direction_numbers(17), 1, 4096))
    return out


def best_time(fn, args, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def end_to_end(budget: int) -> dict:
    code = ("import time; from bayesqp import make_problem, run, RunConfig, BACKEND;"
            f"t0 = time.perf_counter(); run(make_problem('hartmann6-constrained'), RunConfig(budget={budget}));"
            "print(BACKEND, time.perf_counter() - t0)")
    times = {}
    for flag in ("0", "1"):
        env = {**os.environ, "BAYESQP_PURE_PYTHON": flag}
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        name, secs = out.stdout.split()
        times[name] = float(secs)
    return times


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--end-to-end", action="store_true")
    parser.add_argument("--budget", type=int, default=60)
    args = parser.parse_args(argv)
    if _ccore is None:
        print("compiled core not available; build with `pip install -e . --no-build-isolation`")
        return 1

    rows = []
    for label, (name, fargs) in cases(np.random.default_rng(0)).items():
        tp = best_time(getattr(_pycore, name), fargs, args.repeat)
        tc = best_time(getattr(_ccore, name), fargs, args.repeat)
        rows.append((label, tp, tc))
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'python (us)':>12}  {'cython (us)':>12}  {'speedup':>8}")
    for label, tp, tc in rows:
        print(f"{label:<{width}}  {tp * 1e6:12.1f}  {tc * 1e6:12.1f}  {tp / tc:8.2f}")

    if args.end_to_end:
        t = end_to_end(args.budget)
        print(f"\nhartmann6-constrained, T={args.budget}: python {t['python']:.2f} s, "
              f"cython {t['cython']:.2f} s, speedup {t['python'] / t['cython']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
