"""Time the numba and numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once per backend to warm up (numba compiles on first
call), then the best of ``--repeat`` timings is reported.  Outputs of the two
backends are compared so a speedup never hides a wrong answer.
"""
import argparse
import time

import numpy as np

from dropsample import _backend, kernels
from dropsample.features import GRID


def _cases(rng):
    m = 200_000
    quotas = rng.uniform(1e-6, 1.0, m)
    tree = kernels.fenwick_build(quotas)
    targets = rng.random(20_000) * quotas.sum()
    idx = rng.integers(0, m, 5_000)
    delta = rng.uniform(-1e-7, 1e-7, idx.size)
    pts = np.cumsum(rng.normal(size=(5_000, 2)), axis=0)
    segs = rng.uniform(24, 72, (2_000, 4))

    def splat():
        img = np.zeros((GRID, GRID))
        kernels.splat_segments(img, segs)
        return img

    def add():
        t = tree.copy()
        kernels.fenwick_add(t, idx, delta)
        return t

    return {
        "fenwick_build (m=200k)": lambda: kernels.fenwick_build(quotas),
        "fenwick_find (20k draws)": lambda: kernels.fenwick_find(tree, targets),
        "fenwick_add (5k updates)": add,
        "splat_segments (2k segs)": splat,
        "window_signatures (5k pts, w=8)": lambda: kernels.window_signatures(pts, 8),
    }


def _time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _backend.HAVE_NUMBA:
        print("numba unavailable (or disabled); only the numpy backend can run")
    rng = np.random.default_rng(0)
    cases = _cases(rng)
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    saved = _backend.USE_NUMBA
    try:
        for name, fn in cases.items():
            _backend.USE_NUMBA = False
            t_np, out_np = _time(fn, args.repeat), fn()
            if _backend.HAVE_NUMBA:
                _backend.USE_NUMBA = True
                t_nb, out_nb = _time(fn, args.repeat), fn()
                diff = float(np.max(np.abs(np.asarray(out_np, float) - np.asarray(out_nb, float))))
                print(f"{name:34s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.1f} {diff:11.2e}")
            else:
                print(f"{name:34s} {t_np * 1e3:10.3f} {'-':>10s} {'-':>8s} {'-':>11s}")
    finally:
        _backend.USE_NUMBA = saved


if __name__ == "__main__":
    main()
