"""Compare the compiled and pure-Python simulation loops.

    python benchmarks/bench_kernel.py [--n 2000] [--defence none]
"""

import argparse
import time

import numpy as np

from tempus import attack
from tempus.attack import Channel, Defence, ExperimentConfig, run_experiment


def bench(cfg, backend, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        log = run_experiment(cfg, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best, log


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="iterations per run")
    ap.add_argument("--defence", default="NONE", type=str.upper, choices=[d.name for d in Defence])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if "cython" not in attack._BACKENDS:
        raise SystemExit("compiled kernel not available; build with `pip install -e .`")

    print(f"{'channel':<8}{'python s':>10}{'cython s':>10}{'speedup':>9}  identical")
    for ch in Channel:
        cfg = ExperimentConfig(ch, Defence[args.defence], iterations=args.n, seed=0)
        t_py, log_py = bench(cfg, "python", 1)
        t_cy, log_cy = bench(cfg, "cython", args.repeat)
        same = np.array_equal(log_py.latencies, log_cy.latencies)
        print(f"{ch.name:<8}{t_py:>10.3f}{t_cy:>10.4f}{t_py / t_cy:>8.0f}x  {same}")


if __name__ == "__main__":
    main()
