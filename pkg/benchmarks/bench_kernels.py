"""Compiled versus numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time of each kernel on both backends and checks
that the outputs agree.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from leopos import _kernels_py
from leopos.channel import HALF_TAPS, TABLE_OVERSAMPLE, interp_table

try:
    from leopos import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng: np.random.Generator):
    x = rng.standard_normal(1104) + 1j * rng.standard_normal(1104)
    pos = np.arange(760) * (15.36 / 10.56) + 0.37
    table = interp_table(10.56 / 15.36)
    spec = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
    reps = rng.standard_normal((181, 4096)) + 1j * rng.standard_normal((181, 4096))
    return {
        "gold_bits(8400)": lambda k: k.gold_bits(0x1234567, 8400),
        "sinc_interp(760 out)": lambda k: k.sinc_interp(x, pos, table, TABLE_OVERSAMPLE, HALF_TAPS),
        "mul_fold(181x4096, D=4)": lambda k: k.mul_fold(spec, reps, 4),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':26s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}  max|diff|")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _compiled is None:
            print(f"{name:26s} {t_py:10.3f} {'n/a':>10s}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_compiled), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.max(np.abs(np.asarray(fn(_kernels_py), dtype=complex) - np.asarray(fn(_compiled), dtype=complex))))
        print(f"{name:26s} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:8.1f}x  {diff:.2e}")


if __name__ == "__main__":
    main()
