"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the median time of each backend and the
speedup. Shapes match a batch of 8 samples through the 16-channel stage of
the desk-scale network.
"""
import argparse
import statistics
import time

import numpy as np

from tssnn import kernels


def median_seconds(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(rng):
    T, N, C, H, W = 8, 8, 16, 8, 8
    x = rng.normal(0.5, 1.0, (T, N * C * H * W)).astype(np.float32)
    g = rng.normal(size=x.shape).astype(np.float32)
    shift_in = rng.normal(size=(T, N, C, H * W)).astype(np.float32)
    cols = rng.normal(size=(T * N, H, W, C, 3, 3)).astype(np.float32)

    def lif_fwd(b):
        return lambda: b.lif_forward(x, 2.0, 1.0, 0.0, 1.0, False)

    def lif_bwd(b):
        s, v, sg = b.lif_forward(x, 2.0, 1.0, 0.0, 1.0, False)
        return lambda: b.lif_backward(g, s, v, sg, 2.0, 0.0)

    def shift(b):
        return lambda: b.temporal_shift(shift_in, 5, 10, 1, -1, 0)

    def col2im(b):
        return lambda: b.col2im(cols, H + 2, W + 2, 1)

    return {"lif_forward": lif_fwd, "lif_backward": lif_bwd, "temporal_shift": shift, "col2im": col2im}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if kernels.compiled_backend is None:
        print("compiled extension not built; only the numpy fallback is available")
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["compiled"] = kernels.compiled_backend
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for name, make in cases(rng).items():
        times = {b: median_seconds(make(mod), args.repeat) for b, mod in backends.items()}
        row = f"{name:<16}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times.values())
        if "compiled" in times:
            row += f"{times['python'] / times['compiled']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
