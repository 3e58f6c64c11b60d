"""Time the compiled and numpy kernel backends on model-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from spikeatconv import kernels


def cases(rng):
    x = rng.standard_normal((4, 32 * 64 * 16 * 16)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    xp = rng.standard_normal((32, 16, 22, 22)).astype(np.float32)
    w = rng.standard_normal((16, 7, 7)).astype(np.float32)
    go = rng.standard_normal((32, 16, 16, 16)).astype(np.float32)
    lif_args = (2.0, 1.0, 0.0, 0.0, 1.0, 0, kernels.ATAN, 2.0, False, True)

    def lif_fwd(k):
        return lambda: k.lif_forward(x, *lif_args)

    def lif_bwd(k):
        _, ds, dv = k.lif_forward(x, *lif_args)
        return lambda: k.lif_backward(g, ds, dv, 2.0, 1.0)

    def dw_fwd(k):
        return lambda: k.dwconv_forward(xp, w)

    def dw_bwd(k):
        return lambda: k.dwconv_backward(xp, w, go)

    return {"lif_forward T=4 M=524288": lif_fwd, "lif_backward": lif_bwd,
            "dwconv_forward 32x16x16x16 k7": dw_fwd, "dwconv_backward": dw_bwd}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    names = list(backends)
    print(f"{'kernel':<32}" + "".join(f"{n + ' ms':>14}" for n in names) + f"{'speedup':>10}")
    for label, make in cases(rng).items():
        times = {}
        for name, mod in backends.items():
            fn = make(mod)
            fn()
            times[name] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        row = f"{label:<32}" + "".join(f"{times[n]:>14.2f}" for n in names)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
