"""Time the compiled and vectorized stepping backends side by side.

Runs each ensemble scenario once per backend (after a small warm-up that
absorbs JIT compilation) and prints steps-per-second plus the speedup of
numba over numpy.  The reflected-family backends produce bit-identical
trajectories, which is asserted along the way.

Usage::

    python3 benchmarks/kernel_benchmark.py [--paths N] [--t-end T]
"""

import argparse
import dataclasses
import time

import numpy as np

from inertdrift import (
    Ball,
    Interval,
    SimConfig,
    make_coefficients,
    run_ensemble,
)
from inertdrift._kernels import HAVE_NUMBA
from inertdrift.coefficients import Potential
from inertdrift.geometry import SmoothDistance


def scenarios(n_paths, t_end):
    interval = Interval(0.0, 1.0)
    disc = Ball([0.0, 0.0], 1.0)
    cs1 = make_coefficients("identity", interval, gamma=[[1.0]])
    cs2 = make_coefficients("identity", disc, gamma=np.diag([2.0, 1.0]))
    base = dict(dt_base=1e-4, t_end=t_end, n_paths=n_paths, seed=11,
                burn_in=0.0, snap_every=1000)
    yield ("reflected interval d=1", cs1, dict(domain=interval),
           SimConfig(family="reflected", **base))
    yield ("reflected disc d=2", cs2, dict(domain=disc),
           SimConfig(family="reflected", **base))
    wall = Potential("regularized_vn", distance=SmoothDistance(interval), n=4)
    yield ("gradient interval n=4", cs1,
           dict(domain=interval, potential=wall),
           SimConfig(family="gradient", **base))


def run_once(cs, kwargs, cfg, backend):
    start = time.perf_counter()
    batch = run_ensemble(cs, cfg, backend=backend, **kwargs)
    return time.perf_counter() - start, batch


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=64)
    parser.add_argument("--t-end", type=float, default=10.0)
    args = parser.parse_args()

    if not HAVE_NUMBA:
        raise SystemExit(
            "numba backend unavailable (INERTDRIFT_NO_NUMBA set or numba "
            "missing); nothing to compare"
        )

    print("%-26s %12s %12s %9s" % ("scenario", "numba", "numpy", "speedup"))
    print("-" * 62)
    for name, cs, kwargs, cfg in scenarios(args.paths, args.t_end):
        warm = dataclasses.replace(cfg, t_end=0.05, burn_in=0.0)
        run_once(cs, kwargs, warm, "numba")  # trigger JIT compilation
        run_once(cs, kwargs, warm, "numpy")
        t_nb, batch_nb = run_once(cs, kwargs, cfg, "numba")
        t_np, batch_np = run_once(cs, kwargs, cfg, "numpy")
        if cfg.family == "reflected":
            assert np.array_equal(batch_nb.x, batch_np.x), name
        steps = cfg.n_steps * cfg.n_paths
        print(
            "%-26s %9.3g M/s %9.3g M/s %8.1fx"
            % (name, steps / t_nb / 1e6, steps / t_np / 1e6, t_np / t_nb)
        )


if __name__ == "__main__":
    main()
