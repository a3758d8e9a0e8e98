"""Time the compiled and pure-Python kernel backends on identical inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from tonemeter import kernels


def cases(rng: np.random.Generator) -> dict:
    x = rng.normal(size=(16, 32, 32, 16))
    cols = rng.normal(size=(16 * 32 * 32, 9 * 16))
    pts = rng.normal(size=(20000, 3))
    centers = rng.normal(size=(3, 3))
    out, idx = kernels.maxpool_forward(x)
    return {
        "im2col 16x32x32x16 k3": lambda: kernels.im2col(x, 3, 3),
        "col2im 16x32x32x16 k3": lambda: kernels.col2im(cols, x.shape, 3, 3),
        "maxpool_forward 16x32x32x16": lambda: kernels.maxpool_forward(x),
        "maxpool_backward 16x16x16x16": lambda: kernels.maxpool_backward(out, idx),
        "kmeans_assign 20000x3 k3": lambda: kernels.kmeans_assign(pts, centers),
    }


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)

    results: dict[str, dict[str, float]] = {}
    for backend in kernels.available_backends():
        prev = kernels.use_backend(backend)
        try:
            for name, fn in cases(np.random.default_rng(0)).items():
                fn()  # warm-up
                best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
                results.setdefault(name, {})[backend] = best
        finally:
            kernels.use_backend(prev)

    backends = kernels.available_backends()
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, times in results.items():
        line = f"{name:32s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
        if "cython" in times and "python" in times:
            line += f"{times['python'] / times['cython']:11.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
