"""Timing comparison of the tricubic backends.

Run:  python3 benchmarks/bench_spline.py
"""

import time

import numpy as np

from greenlab import _native
from greenlab._native import fallback
from greenlab.interp import TricubicSpline, lattice_points


def main() -> None:
    n = 33
    h = 1.0 / (n - 1)
    rng = np.random.default_rng(0)
    nodes = lattice_points((0.0, 0.0, 0.0), h, (n, n, n))
    table = np.exp(-40.0 * ((nodes - 0.5) ** 2).sum(axis=-1))
    sp = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=h)
    t = np.ascontiguousarray(rng.uniform(1.0, n - 2.0, size=(200_000, 3)))

    print(f"grid {n}^3, {t.shape[0]} evaluation points, selected "
          f"backend: {_native.BACKEND}")
    header = f"{'orders':>10} {'compiled (s)':>14} {'numpy (s)':>12} {'ratio':>7}"
    print(header)
    print("-" * len(header))
    for orders in [(0, 0, 0), (1, 0, 0), (2, 1, 0)]:
        timings = {}
        for name, impl in (("compiled", _native), ("numpy", fallback)):
            if name == "compiled" and _native.BACKEND != "native":
                timings[name] = float("nan")
                continue
            impl.evaluate(sp.coeff, t[:100], *orders)  # warm up
            t0 = time.perf_counter()
            impl.evaluate(sp.coeff, t, *orders)
            timings[name] = time.perf_counter() - t0
        ratio = timings["numpy"] / timings["compiled"]
        print(f"{str(orders):>10} {timings['compiled']:>14.4f} "
              f"{timings['numpy']:>12.4f} {ratio:>7.1f}")


if __name__ == "__main__":
    main()
