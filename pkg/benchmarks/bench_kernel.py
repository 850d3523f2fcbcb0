"""Wall-clock comparison of the compiled and NumPy simulation kernels.

    python3 benchmarks/bench_kernel.py [--repeat 3]

Both kernels run the same scheme on the same streams, so the script also
reports the largest difference between their final states.
"""

import argparse
import dataclasses
import time

import numpy as np

from cbdi import _backend
from cbdi.drift import Linear, Logistic, PowerLog
from cbdi.mechanism import Mechanism, ParetoLogTail, PointMass
from cbdi.simulator import SimConfig, simulate_coupled_ensemble, simulate_ensemble

WORKLOADS = {
    # name: (mechanism, drift, runner, start, config)
    "feller_ensemble": (
        Mechanism(1.0, 0.5), Linear(0.0), simulate_ensemble, 10.0,
        SimConfig(dt=1e-3, t_max=1.0, n_paths=2000, max_points=2)),
    "pareto_coupled": (
        Mechanism(0.0, 0.0, ParetoLogTail(1.5)), Logistic(1.0), simulate_coupled_ensemble,
        np.geomspace(1.0, 1e3, 8), SimConfig(dt=1e-3, t_max=1.0, n_paths=200, max_points=2)),
    "pointmass_flow": (
        Mechanism(0.0, 0.0, PointMass(np.e, 1.0)), PowerLog(1.0, 2.0), simulate_ensemble, 10.0,
        SimConfig(dt=1e-3, t_max=1.0, n_paths=500, max_points=2)),
}


def _time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    backends = ["python"] + (["compiled"] if "compiled" in _backend.available() else [])
    if len(backends) == 1:
        print("compiled kernel not built; timing the NumPy kernel only")
    print(f"{'workload':<18}{'backend':<10}{'seconds':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, (m, d, run, x0, cfg) in WORKLOADS.items():
        base = None
        for be in backends:
            c = dataclasses.replace(cfg, backend=be, threads=args.threads)
            sec, res = _time(lambda: run(m, d, x0, c), args.repeat)
            if base is None:
                base = (sec, res.final)
                diff, speed = 0.0, 1.0
            else:
                diff = float(np.nanmax(np.abs(res.final - base[1])))
                speed = base[0] / sec
            print(f"{name:<18}{be:<10}{sec:>10.3f}{speed:>9.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
