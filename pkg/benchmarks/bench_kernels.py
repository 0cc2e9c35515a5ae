"""Benchmark: compiled simulation kernel vs the numpy fallback.

Run from the repo root after building the extension:

    python3 benchmarks/bench_kernels.py [--steps 20000] [--repeat 3]

The recursion feeds each step back into the next, so the loop cannot be
vectorized over time; this measures how much the compiled core buys.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from neuroflow import _simcore_py, grid_locations, build_knn_graph, random_stable_model

try:
    from neuroflow import _simcore
except ImportError:
    _simcore = None


def time_backend(impl, model, top, steps, repeat):
    hist = np.zeros((model.order, top.n_nodes))
    drive = np.random.default_rng(0).standard_normal((steps, top.n_nodes)) * 0.05
    out = np.zeros((steps, top.n_nodes))
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        impl.simulate_steps(
            model.node_memory, model.edge_weights, top.tails, top.heads,
            hist, drive, out,
        )
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=20000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    print(f"{'grid':>8} {'order':>5} {'python [s]':>12} {'cython [s]':>12} {'speedup':>8}")
    for rows, cols, order in [(6, 6, 2), (10, 10, 5), (10, 10, 9)]:
        top = build_knn_graph(grid_locations(rows, cols), 8)
        model = random_stable_model(top, order, 0.5, seed=1)
        t_py = time_backend(_simcore_py, model, top, args.steps, args.repeat)
        if _simcore is None:
            print(f"{rows}x{cols:>3} {order:>5} {t_py:>12.3f} {'n/a':>12} {'n/a':>8}")
            continue
        t_cy = time_backend(_simcore, model, top, args.steps, args.repeat)
        print(
            f"{rows}x{cols:>3} {order:>5} {t_py:>12.3f} {t_cy:>12.3f} "
            f"{t_py / t_cy:>7.1f}x"
        )


if __name__ == "__main__":
    main()
