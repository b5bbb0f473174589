"""Timing comparison of the wavelet kernels: compiled extension versus
the pure-numpy fallback, plus a bitwise-equality check between them.

Usage: python benchmarks/bench_wavelet.py [--repeats N]
"""

import argparse
import time

import numpy as np

from haarmae.rasters import Raster
from haarmae.wavelet.transform import (
    available_backends,
    dwt_multi,
    idwt_multi,
    use_backend,
)

CASES = [
    ("64x64x4 depth 3", (4, 64, 64), 3),
    ("224x224x4 depth 4", (4, 224, 224), 4),
    ("512x512x8 depth 4", (8, 512, 512), 4),
]


def bench_case(shape, depth, repeats):
    rng = np.random.default_rng(0)
    x = Raster(rng.normal(size=shape))
    best_fwd = best_inv = float("inf")
    s = dwt_multi(x, depth)
    for _ in range(repeats):
        t0 = time.perf_counter()
        s = dwt_multi(x, depth)
        best_fwd = min(best_fwd, time.perf_counter() - t0)
        t0 = time.perf_counter()
        idwt_multi(s)
        best_inv = min(best_inv, time.perf_counter() - t0)
    return best_fwd, best_inv, s


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing repeats per case (best is reported)")
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    if "compiled" not in backends:
        print("compiled extension not built; timing numpy only")

    header = f"{'case':<22}" + "".join(
        f"{b + ' fwd':>14}{b + ' inv':>14}" for b in backends
    )
    print(header)
    print("-" * len(header))
    for label, shape, depth in CASES:
        row = f"{label:<22}"
        outputs = {}
        for backend in backends:
            use_backend(backend)
            fwd, inv, s = bench_case(shape, depth, args.repeats)
            outputs[backend] = s.to_ordered()
            row += f"{fwd * 1e3:>12.2f}ms{inv * 1e3:>12.2f}ms"
        print(row)
        if len(outputs) == 2:
            a, b = outputs.values()
            identical = all(np.array_equal(x, y) for x, y in zip(a, b))
            print(f"{'':<22}bitwise identical: {identical}")
            if not identical:
                raise SystemExit("backend outputs diverged")
    use_backend("auto")


if __name__ == "__main__":
    main()
