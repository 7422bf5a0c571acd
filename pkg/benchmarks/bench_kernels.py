"""Benchmark the compiled dual-arithmetic kernels against the numpy
fallback.

The workload is the hot path of the trajectory optimizer: Jacobians of the
two tanh networks over the collocation grid, plus Jacobians of the cart-pole
vector field.  The backend is fixed at import time, so this script re-runs
itself in a subprocess with ``CTRLKIT_PURE_PYTHON=1`` to time the fallback.

Usage:  python3 benchmarks/bench_kernels.py
"""

import os
import subprocess
import sys
import time

import numpy as np


def time_workload(repeats=5):
    from ctrlkit.autodiff import BACKEND, jacobian
    from ctrlkit.models import load_builtin
    from ctrlkit.mpc import (SqpConfig, default_pendulum_problem,
                             init_weights, _solver_rows)
    from ctrlkit.structural import causal_field, causalize

    f = causal_field(causalize(load_builtin("pendulum")))
    p = default_pendulum_problem(f)
    w = init_weights(p, SqpConfig(seed=0))

    best_rows = min(
        _timeit(lambda: _solver_rows(p, w, aggregated=False), repeats))
    point = np.array([0.1, 0.2, 2.9, -0.3, 1.0])
    best_field = min(
        _timeit(lambda: [jacobian(f, point) for _ in range(50)], repeats))
    return BACKEND, best_rows, best_field


def _timeit(fn, repeats):
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def main():
    backend, t_rows, t_field = time_workload()
    print(f"{backend:>8s}  constraint-jacobian: {t_rows * 1e3:8.1f} ms"
          f"   field-jacobian x50: {t_field * 1e3:8.1f} ms", flush=True)
    if backend == "compiled":
        env = dict(os.environ, CTRLKIT_PURE_PYTHON="1")
        subprocess.run([sys.executable, os.path.abspath(__file__)],
                       check=True, env=env)


if __name__ == "__main__":
    main()
