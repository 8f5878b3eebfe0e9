"""Benchmark the numba and numpy kernel backends against each other.

The backend is frozen at import time from ROOMSIM_BACKEND, so each
backend runs in its own subprocess (worker mode) and the parent collates
the timings.  Each case gets one untimed warmup pass to absorb JIT
compilation, then `--repeats` timed passes.

Usage:
    python3 benchmarks/benchmark_kernels.py [--repeats 5]
    python3 benchmarks/benchmark_kernels.py --worker numpy   # one backend
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import subprocess
import sys
import time


def _bench_cases():
    from roomsim.demo import make_demo_scene
    from roomsim.fdtd import FdtdConfig, render_rir_fdtd
    from roomsim.ism import IsmConfig, render_rir_ism
    from roomsim.raytrace import RtConfig, render_rir_rt

    scene = make_demo_scene(n_receivers=1)
    return {
        "ism order 30": lambda: render_rir_ism(
            scene, "s0", "r0", IsmConfig(max_order=30, duration=0.8)
        ),
        "rt 50k rays": lambda: render_rir_rt(
            scene, "s0", "r0", RtConfig(n_rays=50_000, max_time=0.8)
        ),
        "fdtd dx=0.15 0.1s": lambda: render_rir_fdtd(
            scene, "s0", "r0", FdtdConfig(dx=0.15, duration=0.1)
        ),
    }


def run_worker(backend: str, repeats: int) -> None:
    os.environ["ROOMSIM_BACKEND"] = backend
    from roomsim.kernels import backend as be

    assert be.backend_name() == backend, be.backend_info()
    results = {}
    for name, fn in _bench_cases().items():
        fn()  # warmup / JIT
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        results[name] = times
    json.dump(results, sys.stdout)


def _collect(backend: str, repeats: int) -> dict:
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker", backend,
         "--repeats", str(repeats)],
        capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--worker", choices=("numba", "numpy"))
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if args.worker:
        run_worker(args.worker, args.repeats)
        return 0

    timings = {b: _collect(b, args.repeats) for b in ("numba", "numpy")}
    print(f"{args.repeats} repeats per case, warm (JIT excluded)\n")
    print(f"{'case':<20} {'numba':>18} {'numpy':>18} {'speedup':>8}")
    print("-" * 68)
    for name in timings["numba"]:
        stats = {}
        for b in ("numba", "numpy"):
            t = timings[b][name]
            mean = statistics.mean(t)
            std = statistics.stdev(t) if len(t) > 1 else 0.0
            stats[b] = (mean, std)
        nb, np_ = stats["numba"], stats["numpy"]
        cell = lambda m, s: f"{m * 1e3:9.1f} ± {s * 1e3:5.1f} ms"
        print(f"{name:<20} {cell(*nb):>18} {cell(*np_):>18} "
              f"{np_[0] / nb[0]:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
