"""Time the numba and numpy versions of each hot kernel.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call compiles (or loads from cache) and is excluded.
"""
import argparse
import timeit

import numpy as np

from whcpd import _accel, _kernels
from whcpd.estimators import J_FLOOR, random_init
from whcpd.montecarlo import draw_noise
from whcpd.multilinear import flat_unfold, vec
from whcpd.whmodel import WhParams, volterra_kernel

W = np.array([1.0, 0.538, 1.834, -2.259, 0.862])
H = np.array([1.594, -6.538, -2.168])


def cases():
    X = volterra_kernel(WhParams(W, H, 1.0, 3))
    Y = X + 0.1 * draw_noise(7, 3, 0)
    Y_flat, y = np.ascontiguousarray(flat_unfold(Y)), vec(Y)
    w0, h0 = random_init(np.random.default_rng(0), 5, 3)
    u = np.random.default_rng(1).standard_normal(2000)
    kflat = np.ascontiguousarray(vec(X))
    g = np.array([0.0, 0.0, 1.0])
    floor = J_FLOOR * float(y @ y)
    return {
        "volterra_kernel (M=7, p=3)": ("volterra_kernel", (W, H, 1.0, 3)),
        "volterra_response (N=2000)": ("volterra_response", (u, kflat, 7, 3)),
        "wh_response (N=2000)": ("wh_response", (u, W, H, g)),
        "cals_loop (200 sweeps)": ("cals_loop",
                                   (Y_flat, y, w0, h0, 3, 200, 1e-300, 1e-12, floor)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is timed")
    print(f"{'kernel':<28} {'numpy (ms)':>11} {'numba (ms)':>11} {'speedup':>8}")
    for label, (name, call_args) in cases().items():
        times = {}
        for suffix in ("np", "jit") if _accel.HAVE_NUMBA else ("np",):
            fn = getattr(_kernels, f"{name}_{suffix}")
            fn(*call_args)  # warm-up / compile
            t = timeit.Timer(lambda: fn(*call_args))
            n, _ = t.autorange()
            times[suffix] = min(t.repeat(args.repeat, n)) / n * 1e3
        jit = times.get("jit", float("nan"))
        print(f"{label:<28} {times['np']:>11.3f} {jit:>11.3f} {times['np'] / jit:>7.1f}x")


if __name__ == "__main__":
    main()
