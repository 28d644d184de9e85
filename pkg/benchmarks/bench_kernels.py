"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeats N] [--sizes 16,32,64]

Each row prints the median wall time per call on both backends, the speedup,
and the largest elementwise difference between the two results.
"""
from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from glora.linalg import compiled_available, reduced_qr, sym_eig, thin_svd, use_backend


def _median(fn, repeats: int) -> float:
    fn()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def _cases(n: int, rng: np.random.Generator):
    tall = rng.standard_normal((8 * n, n))
    g = rng.standard_normal((n, n))
    sym = g @ g.T
    yield "qr", (8 * n, n), lambda: reduced_qr(tall), lambda r: r.q
    yield "svd", (8 * n, n), lambda: thin_svd(tall), lambda r: r.sigma
    yield "eig-ql", (n, n), lambda: sym_eig(sym, "ql"), lambda r: r.values
    yield "eig-jacobi", (n, n), lambda: sym_eig(sym, "jacobi"), lambda r: r.values


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--sizes", default="16,32,64")
    args = parser.parse_args(argv)
    if not compiled_available():
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    sizes = [int(v) for v in args.sizes.split(",") if v.strip()]
    print(f"{'kernel':<11} {'shape':>10} {'compiled_ms':>12} {'python_ms':>10} {'speedup':>8} {'max_diff':>9}")
    for n in sizes:
        rng = np.random.default_rng(n)
        for name, shape, fn, key in _cases(n, rng):
            out = {}
            times = {}
            for backend in ("compiled", "python"):
                with use_backend(backend):
                    out[backend] = key(fn())
                    times[backend] = _median(fn, args.repeats)
            diff = float(np.abs(out["compiled"] - out["python"]).max())
            shape_s = f"{shape[0]}x{shape[1]}"
            print(f"{name:<11} {shape_s:>10} {times['compiled'] * 1e3:12.3f} {times['python'] * 1e3:10.3f} "
                  f"{times['python'] / times['compiled']:8.1f} {diff:9.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
