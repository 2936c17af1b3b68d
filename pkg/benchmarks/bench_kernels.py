"""Time the hot kernels with numba and with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Each variant runs in its own interpreter (the fallback is selected by
FLOWSPLIT_DISABLE_NUMBA=1 at import time).  Numba timings exclude the first
(compiling) call.  Outputs of both variants are compared for agreement.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _cases():
    from flowsplit.queue_models import md1_wait_cdf_kernel
    from flowsplit.scenarios import load_scenario
    from flowsplit.sim import SimConfig, simulate
    from flowsplit.travel_time import exp_convolve_kernel

    h = 1e-3
    grid = np.arange(4000) * h
    F = 1.0 - np.exp(-2.0 * grid)
    small = load_scenario("small").topology

    def conv():
        return exp_convolve_kernel(F, 3.0, h)

    def md1():
        return md1_wait_cdf_kernel(0.8, 1.0, 1e-3, 20000)

    def sim():
        r = simulate(small, SimConfig(horizon=2000.0, seed=1))
        return np.array([r.mean_trip_time, r.mean_occupancy])

    return {"exp_convolve (n=4000)": conv, "md1_wait_cdf (n=20000)": md1,
            "simulate small (H=2000)": sim}


def child(repeat: int) -> None:
    from flowsplit._jit import USING_NUMBA
    out = {"numba": USING_NUMBA, "cases": {}}
    for name, fn in _cases().items():
        first = fn()  # compiles under numba
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        out["cases"][name] = {"best_s": min(times), "result": np.asarray(first, float).tolist()}
    json.dump(out, sys.stdout)


def run_variant(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, FLOWSPLIT_DISABLE_NUMBA="1" if disable else "0")
    proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.child:
        child(args.repeat)
        return
    jit = run_variant(False, args.repeat)
    py = run_variant(True, args.repeat)
    print(f"{'kernel':28s} {'numba [s]':>11s} {'python [s]':>11s} {'speedup':>9s} {'max |diff|':>11s}")
    for name, a in jit["cases"].items():
        b = py["cases"][name]
        diff = float(np.max(np.abs(np.subtract(a["result"], b["result"]))))
        print(f"{name:28s} {a['best_s']:11.4f} {b['best_s']:11.4f} "
              f"{b['best_s'] / a['best_s']:9.1f} {diff:11.2e}")
    if not jit["numba"]:
        print("note: numba unavailable, both columns ran the fallback")


if __name__ == "__main__":
    main()
