"""Time the compiled kernels against the NumPy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Prints one line per kernel
with the best-of-``repeat`` wall time for each backend and the speedup.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from tiltminimax._kernels import _fallback

try:
    from tiltminimax._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=256)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.rows, args.n))
    z = rng.standard_normal((8, args.reps))
    e = np.linspace(-2.0, 2.0, 8)

    cases = [
        (f"row_medians {args.rows}x{args.n}", lambda m: m.row_medians(x)),
        (f"tilted_stats est 8x{args.reps}", lambda m: m.tilted_stats(z, e, 0, 1.0, 25.0)),
        (f"tilted_stats treat 8x{args.reps}", lambda m: m.tilted_stats(z, e, 1, 1.0, np.inf)),
    ]
    print(f"{'kernel':34s} {'cython [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>8s}")
    for name, call in cases:
        tc = _time(lambda: call(_ckernels), args.repeat)
        tp = _time(lambda: call(_fallback), args.repeat)
        print(f"{name:34s} {1e3 * tc:12.2f} {1e3 * tp:12.2f} {tp / tc:8.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
