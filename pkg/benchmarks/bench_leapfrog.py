"""Compiled versus numpy leapfrog sweeps on the default control problem.

Run with ``python benchmarks/bench_leapfrog.py``; prints the best of
``--repeat`` wall times per backend and the speedup, and checks that both
backends produce the same trajectory.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from lorentz_carleman import leapfrog
from lorentz_carleman.wave_control import WaveConfig, build_problem, bump, initial_levels


def _levels(prob):
    Y = np.zeros((prob.N + 1, prob.J + 1))
    Y[0], Y[1] = initial_levels(prob, bump(prob.x), np.zeros_like(prob.x))
    return Y


def bench(nx: int, repeat: int) -> dict:
    prob = build_problem(WaveConfig(nx=nx, nt=2 * nx))
    base = _levels(prob)
    out = {}
    results = {}
    for backend in ("cython", "numpy"):
        if backend == "cython" and leapfrog.BACKEND != "cython":
            continue
        for kind, fn in (("forward", leapfrog.forward), ("transpose", leapfrog.transpose)):
            def call():
                return fn(*prob.coeffs, base.copy(), backend=backend)

            results[backend, kind] = call()
            out[backend, kind] = min(timeit.repeat(call, number=1, repeat=repeat))
    if ("cython", "forward") in results:
        for kind in ("forward", "transpose"):
            gap = np.abs(results["cython", kind] - results["numpy", kind]).max()
            assert gap < 1e-12, f"{kind}: backends disagree by {gap:.3e}"
    return {"grid": f"{nx}x{prob.N}", **{f"{b}/{k}": t for (b, k), t in out.items()}}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"default backend: {leapfrog.BACKEND}")
    for nx in args.sizes:
        row = bench(nx, args.repeat)
        line = f"{row.pop('grid'):>10s}"
        for key, t in row.items():
            line += f"  {key} {t * 1e3:8.2f} ms"
        for kind in ("forward", "transpose"):
            if f"cython/{kind}" in row:
                line += f"  {kind} speedup x{row[f'numpy/{kind}'] / row[f'cython/{kind}']:.1f}"
        print(line)


if __name__ == "__main__":
    main()
