"""Time the compiled and pure-Python forest kernels on the same data.

Usage: python3 benchmarks/bench_forest.py [--n 2000 10000] [--trees 50] [--repeat 3]
"""

import argparse
import time

import numpy as np

from stacklab.core import RngStream
from stacklab.estimators import forest


def _data(n, p, seed=0):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(n, p))
    y = (gen.random(n) < 1 / (1 + np.exp(-X[:, 0] + 0.5 * X[:, 1]))).astype(float)
    return X, y


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[2000, 10000])
    ap.add_argument("--p", type=int, default=17)
    ap.add_argument("--trees", type=int, default=50)
    ap.add_argument("--depth", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = [b for b in ("cython", "python") if b in forest.KERNELS]
    print(f"backends available: {', '.join(backends)}")
    print(f"{'n':>7} {'backend':>8} {'fit s':>9} {'predict s':>10} {'rel time':>9}")
    for n in args.n:
        X, y = _data(n, args.p)
        fits = {}
        ref = None
        for b in backends:
            def fit():
                return forest.grow_forest(X, y, args.trees, args.depth, 5, None, RngStream(1),
                                          1, b)[0]
            t_fit, arrays = _time(fit, args.repeat)
            t_pred, pred = _time(lambda: forest.predict_arrays(arrays, X, b), args.repeat)
            fits[b] = (t_fit, arrays, pred)
            ref = ref or t_fit
            print(f"{n:>7} {b:>8} {t_fit:>9.3f} {t_pred:>10.3f} {t_fit / ref:>9.2f}")
        if len(fits) == 2:
            a, c = fits["cython"], fits["python"]
            same = all(np.array_equal(a[1][k], c[1][k]) for k in a[1]) and np.array_equal(a[2], c[2])
            print(f"{n:>7} identical trees and predictions: {same}; "
                  f"compiled is {c[0] / a[0]:.1f}x faster to fit")


if __name__ == "__main__":
    main()
