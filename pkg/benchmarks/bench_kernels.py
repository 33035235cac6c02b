"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes are those of one training mini-batch (32 patches of 64x64) in the
patch classifier, plus a forest split scan over 20k samples.
"""

import argparse
import timeit

import numpy as np

from chaintrace import _pykernels

try:
    from chaintrace import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    x1 = rng.normal(size=(32, 6, 64, 64)).astype(np.float32)
    bn = rng.normal(size=(32, 96, 64 * 64)).astype(np.float32)
    g = np.ones(96, np.float32)
    b = np.zeros(96, np.float32)
    pool = rng.normal(size=(32, 96, 64, 64)).astype(np.float32)
    vals = np.sort(rng.normal(size=20_000))
    labels = rng.integers(0, 5, 20_000).astype(np.intp)
    w = rng.integers(0, 3, 20_000).astype(np.float64)

    def prep(k):
        cols = k.im2col(x1, 7, 1, 3)
        out, mean, inv, _ = k.batchnorm_forward(bn, g, b, 1e-5)
        pooled, arg = k.maxpool_forward(pool, 2, 2)
        return cols, mean, inv, pooled, arg

    return {
        "im2col 7x7 (32,6,64,64)": lambda k, s: k.im2col(x1, 7, 1, 3),
        "col2im 7x7 (32,6,64,64)": lambda k, s: k.col2im(s[0], x1.shape, 7, 1, 3),
        "batchnorm fwd (32,96,4096)": lambda k, s: k.batchnorm_forward(bn, g, b, 1e-5),
        "batchnorm bwd (32,96,4096)": lambda k, s: k.batchnorm_backward(bn, bn, s[1], s[2], g),
        "maxpool fwd (32,96,64,64)": lambda k, s: k.maxpool_forward(pool, 2, 2),
        "maxpool bwd (32,96,64,64)": lambda k, s: k.maxpool_backward(s[3], s[4], pool.shape, 2, 2),
        "gini split scan (20000, 5 classes)": lambda k, s: k.best_gini_split(vals, labels, w, 5, 1.0),
    }, prep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    table, prep = cases(rng)
    backends = [("numpy", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    state = {name: prep(mod) for name, mod in backends}
    print(f"{'kernel':38s}" + "".join(f"{n:>12s}" for n, _ in backends) + "     speedup")
    for label, fn in table.items():
        times = []
        for name, mod in backends:
            t = min(timeit.repeat(lambda: fn(mod, state[name]), number=1, repeat=args.repeat))
            times.append(t)
        row = f"{label:38s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:11.1f}x"
        print(row)
    if not _ckernels:
        print("compiled extension not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
