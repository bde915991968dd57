"""Compare the compiled depthwise temporal kernel with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes follow the default model's three blocks at batch 32. Each row reports
the best-of-``repeat`` wall time per call and the speedup of the compiled
backend; outputs of the two backends are compared as a sanity check.
"""
import argparse
import time

import numpy as np

from retcn import kernels

SHAPES = [  # (N, C, T, V, K)
    (32, 16, 64, 10, 5),
    (32, 32, 64, 10, 5),
    (32, 64, 64, 10, 5),
    (32, 64, 64, 25, 9),
]


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    if kernels.BACKEND != "compiled":
        print("compiled extension not available; only the numpy fallback can run")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'shape (N,C,T,V,K)':<24} {'pass':<9} {'numpy ms':>9} {'compiled ms':>11} {'speedup':>8} {'max diff':>9}")
    for n, c, t, v, k in SHAPES:
        x = rng.standard_normal((n, c, t, v)).astype(np.float32)
        w = rng.standard_normal((c, k)).astype(np.float32)
        b = rng.standard_normal(c).astype(np.float32)
        g = rng.standard_normal((n, c, t, v)).astype(np.float32)
        cases = {
            "forward": (lambda be: kernels.depthwise_forward(x, w, b, backend=be)),
            "backward": (lambda be: kernels.depthwise_backward(x, w, g, backend=be)),
        }
        for name, call in cases.items():
            py = best_time(lambda: call("python"), args.repeat)
            cc = best_time(lambda: call(None), args.repeat)
            a, r = call(None), call("python")
            if isinstance(a, tuple):
                diff = max(float(np.abs(p - q).max()) for p, q in zip(a, r))
            else:
                diff = float(np.abs(a - r).max())
            print(f"{str((n, c, t, v, k)):<24} {name:<9} {py * 1e3:>9.3f} {cc * 1e3:>11.3f} "
                  f"{py / cc:>7.2f}x {diff:>9.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
