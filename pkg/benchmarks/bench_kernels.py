"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same inputs under both backends; the script checks the
outputs are bit-identical and prints the best wall time and the speedup.
"""

import argparse
import time

import numpy as np

from autorig._kernels import backends


def _inputs(seed: int = 0):
    rng = np.random.default_rng(seed)
    n = 32
    occ = (rng.random((n, n, n)) < 0.7).astype(np.uint8)
    src = int(np.flatnonzero(occ)[0])
    starts = rng.uniform(-0.5, 0.5, (2000, 3))
    ends = rng.uniform(-0.5, 0.5, (2000, 3))
    tris = rng.uniform(-0.4, 0.4, (400, 3, 3))
    pts = rng.normal(size=(8192, 3))
    return {
        "voxel_dijkstra (32^3)": lambda m: m.voxel_dijkstra(occ, src, 0.0, 1 / n),
        "segments_visible (2000 segments)": lambda m: m.segments_visible(occ, starts, ends, 1 / n, -0.5,
                                                                         1 / (4 * n)),
        "triangle_voxelize (400 tris, 64^3)": lambda m: m.triangle_voxelize(tris, 64, -0.5, 1 / 64, 1 / 128),
        "farthest_point_sample (8192 -> 256)": lambda m: m.farthest_point_sample(pts, 256, 0),
    }


def best_time(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    mods = backends()
    if "cython" not in mods:
        print("compiled backend not built; only the fallback is available")
    print(f"{'kernel':40s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s} {'identical':>9s}")
    for name, call in _inputs().items():
        tp, op = best_time(lambda: call(mods["python"]), args.repeat)
        if "cython" in mods:
            tc, oc = best_time(lambda: call(mods["cython"]), args.repeat)
            same = np.array_equal(op, oc)
            print(f"{name:40s} {tp:10.4f} {tc:10.4f} {tp / tc:7.1f}x {str(same):>9s}")
        else:
            print(f"{name:40s} {tp:10.4f} {'-':>10s} {'-':>8s} {'-':>9s}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
