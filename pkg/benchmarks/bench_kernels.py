"""Time the compiled kernels against the numpy fallback on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--nodes 2000]
"""
import argparse
import time

import numpy as np

from varplane import _kernels_py
from varplane.field_grid import AnnulusSpec, Grid3, sample_annulus
from varplane.kernels import compiled_backend


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(n_nodes, seed=0):
    rng = np.random.default_rng(seed)
    grid = Grid3.cube(1.5, 33)
    values = rng.random(grid.points)
    lo, h = grid.lo, grid.h
    shear = (1.0, 0.0, 1.0)
    X = rng.uniform(-1, 1, (n_nodes, 3))
    AX = X[:, :2] @ np.array([[1.0, 1.0], [0.0, 1.0]]).T
    T = rng.uniform(0.5, 2.0, n_nodes)
    C = rng.random(n_nodes)
    Y, W = sample_annulus(AnnulusSpec(2.0 ** -4))
    P = rng.uniform(-1.5, 1.5, (50 * n_nodes, 3))
    return {
        "trilinear": lambda m: m.trilinear(values, lo, h, shear, P),
        "plane_average": lambda m: m.plane_average(values, lo, h, shear, X, AX, T, Y, W),
        "plane_scatter": lambda m: m.plane_scatter(values.shape, lo, h, shear, X, AX, T, C, Y, W),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nodes", type=int, default=2000)
    args = ap.parse_args()
    ext = compiled_backend()
    print(f"{'kernel':<14} {'python s':>10} {'compiled s':>11} {'speedup':>8} {'max diff':>10}")
    for name, run in cases(args.nodes).items():
        tp, outp = best_of(lambda: run(_kernels_py), args.repeat)
        if ext is None:
            print(f"{name:<14} {tp:10.4f} {'n/a':>11}")
            continue
        tc, outc = best_of(lambda: run(ext), args.repeat)
        diff = float(np.max(np.abs(np.asarray(outp) - np.asarray(outc))))
        print(f"{name:<14} {tp:10.4f} {tc:11.4f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
