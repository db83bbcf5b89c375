"""Time the compiled integrator core against the pure-Python one.

Usage::

    python benchmarks/bench_core.py [--repeat 3] [--horizon 20]
"""

import argparse
import math
import time

from slipcert import simulate as sim
from slipcert.linear_part import make_pll_example


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--horizon", type=float, default=20.0, help="simulated time (200 T at the preset)")
    args = ap.parse_args(argv)

    if sim.BACKEND != "compiled":
        print("compiled core not available; only the Python core will be timed")
    model = make_pll_example(0.1, 0.4, 0.9, 1.0)
    init = sim.InitialState(math.asin(0.9), 1.5)
    cases = {
        "pll_ode": lambda pure: sim.integrate_pll_example(model, init, horizon=args.horizon, pure=pure),
        "volterra": lambda pure: sim.integrate_volterra(model, init, horizon=args.horizon, pure=pure),
    }
    print(f"{'kernel':<10} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'max |diff|':>11}")
    for name, run in cases.items():
        t_py = best_of(lambda: run(True), args.repeat)
        if sim.BACKEND == "compiled":
            t_c = best_of(lambda: run(False), args.repeat)
            diff = float(abs(run(True).sigma - run(False).sigma).max())
            print(f"{name:<10} {t_py:>11.4f} {t_c:>13.4f} {t_py / t_c:>7.1f}x {diff:>11.1e}")
        else:
            print(f"{name:<10} {t_py:>11.4f} {'-':>13} {'-':>8} {'-':>11}")


if __name__ == "__main__":
    main()
