"""Compare the compiled step kernel against the numpy fallback.

Two measurements:
  * raw ``advance`` calls on random fleets of several sizes (both backends in-process)
  * a full default stretch scenario, the fallback forced in a subprocess via STOPGO_PURE_PYTHON

Usage: python benchmarks/bench_kernel.py [--repeat N] [--skip-full]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from stopgo.cfm import DEFAULT_IDM
from stopgo.controllers import IdmRelaxation
from stopgo.sim import _pykernel
from stopgo.sim.params import KIND_HUMAN, KIND_IDMR, pack

try:
    from stopgo.sim import _ckernel
except ImportError:
    _ckernel = None

FULL_RUN = ("import time; from stopgo.sim import kernel, run, ScenarioConfig, StretchGeometry;"
            "from stopgo.controllers import IdmRelaxation;"
            "cfg = ScenarioConfig(StretchGeometry(), penetration=0.1, controller=IdmRelaxation(5.0, 0.5), seed=0);"
            "t = time.perf_counter(); run(cfg); print(kernel.BACKEND, time.perf_counter() - t)")


def fleet(n, rng):
    gap = rng.uniform(1.0, 60.0, n)
    v = rng.uniform(0.0, 25.0, n)
    vl = np.clip(v + rng.normal(0, 2, n), 0, None)
    lim = np.full(n, np.inf)
    kind = np.where(np.arange(n) % 10 == 9, KIND_IDMR, KIND_HUMAN).astype(np.int8)
    noise = rng.normal(0, 0.1, n)
    outs = [np.empty(n) for _ in range(4)]
    return gap, v, vl, lim, kind, noise, outs


def time_advance(mod, args, prm, repeat):
    gap, v, vl, lim, kind, noise, outs = args
    calls = 2000
    best = min(timeit.repeat(lambda: mod.advance(gap, v, vl, lim, kind, noise, prm, *outs),
                             number=calls, repeat=repeat))
    return best / calls * 1e6


def full_run(pure):
    env = dict(os.environ)
    env.pop("STOPGO_PURE_PYTHON", None)
    if pure:
        env["STOPGO_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", FULL_RUN], env=env, check=True, capture_output=True, text=True)
    backend, secs = out.stdout.split()
    return backend, float(secs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-full", action="store_true")
    args = ap.parse_args(argv)
    if _ckernel is None:
        print("compiled kernel not built; only the fallback is available", file=sys.stderr)
        return 1

    prm = pack(DEFAULT_IDM, "interaction", 0.4, (-4.5, 3.0), True, 4.5, 0.5, IdmRelaxation(5.0, 0.5))
    rng = np.random.default_rng(0)
    print(f"{'vehicles':>8} {'cython us/step':>15} {'numpy us/step':>14} {'speedup':>8}")
    for n in (22, 200, 2000, 20000):
        state = fleet(n, rng)
        c = time_advance(_ckernel, state, prm, args.repeat)
        p = time_advance(_pykernel, state, prm, args.repeat)
        print(f"{n:>8} {c:>15.2f} {p:>14.2f} {p / c:>7.1f}x")

    if not args.skip_full:
        (bc, tc), (bp, tp) = full_run(False), full_run(True)
        print(f"\nfull stretch run (1920 s simulated, 10% IDM+R):\n"
              f"  {bc:<7} {tc:6.2f} s\n  {bp:<7} {tp:6.2f} s\n  speedup {tp / tc:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
