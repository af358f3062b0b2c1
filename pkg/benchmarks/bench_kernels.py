"""Time the numba and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py [--sizes 16 32 64] [--repeat 5]

Two parts: the pointwise kernels called directly on both backends, then one
full right-hand side evaluation per backend in a subprocess with
``LLG_GALERKIN_KERNELS`` set, since the backend is fixed at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from llg_galerkin import _kernels

RHS_SNIPPET = """
import json, timeit
from llg_galerkin import _kernels
from llg_galerkin.config import random_initial
from llg_galerkin.grid import BoxDomain, Field, build_basis
from llg_galerkin.physics import ModelConfig, SpinCurrent
from llg_galerkin.solver import initial_state
d = BoxDomain((1.0, 1.0, 1.0), ({r}, {r}, {r}))
cur = SpinCurrent.from_expressions(d, ["sin(2*pi*t)*cos(pi*x2)", "0.5", "0"])
s = initial_state(Field(d, random_initial(d, 0)), build_basis(d, {n}), ModelConfig(beta=0.5, current=cur))
s.system.rhs(s.c, 0.0)
best = min(timeit.repeat(lambda: s.system.rhs(s.c, 0.0), number=3, repeat={repeat})) / 3
print(json.dumps({{"backend": _kernels.ACTIVE.name, "seconds": best}}))
"""


def _best(fn, repeat, number=5):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def pointwise(sizes, repeat):
    backends = [b for b in (_kernels.NUMPY, _kernels.NUMBA) if b is not None]
    rng = np.random.default_rng(0)
    rows = []
    for r in sizes:
        p = r ** 3
        u = np.ascontiguousarray(rng.normal(size=(3, p)))
        h = np.ascontiguousarray(rng.normal(size=(3, p)))
        x, y, z = rng.normal(size=(3, p))
        calls = {
            "clip": lambda k: k.clip(u),
            "torque": lambda k: k.torque(u, h, 1.0, 1.0),
            "q_sum": lambda k: k.q_sum(u),
            "newell_f": lambda k: k.newell_f(x, y, z),
        }
        for name, call in calls.items():
            times = {}
            for k in backends:
                call(k)  # compile / warm up
                times[k.name] = _best(lambda: call(k), repeat)
            rows.append((name, r, times))
    return rows


def full_rhs(res, n, repeat):
    out = {}
    for flag in ("numpy", "numba"):
        env = dict(os.environ, **{_kernels.ENV_FLAG: flag})
        proc = subprocess.run([sys.executable, "-c", RHS_SNIPPET.format(r=res, n=n, repeat=repeat)],
                              env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            out[flag] = None
            print(f"{flag}: {proc.stderr.strip().splitlines()[-1]}", file=sys.stderr)
            continue
        out[flag] = json.loads(proc.stdout)["seconds"]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64], help="grid points per axis")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--rhs-resolution", type=int, default=16)
    ap.add_argument("--rhs-modes", type=int, default=125)
    args = ap.parse_args(argv)

    print(f"{'kernel':<10} {'grid':>6} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>8}")
    for name, r, t in pointwise(args.sizes, args.repeat):
        a, b = t.get("numpy"), t.get("numba")
        speed = f"{a / b:8.2f}" if b else "     n/a"
        print(f"{name:<10} {r:>5}^3 {a * 1e3:12.3f} {(b or float('nan')) * 1e3:12.3f} {speed}")

    t = full_rhs(args.rhs_resolution, args.rhs_modes, args.repeat)
    print(f"\nfull right-hand side, {args.rhs_resolution}^3 grid, n={args.rhs_modes}:")
    for flag, s in t.items():
        print(f"  {flag:<6} {'failed' if s is None else f'{s * 1e3:.2f} ms'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
