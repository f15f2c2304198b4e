"""Bagged regression forests on top of the tree kernel.

The compiled kernel is used when it imports; ``STACKLAB_PURE=1`` forces the
numpy fallback. Both kernels give identical trees.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _forest_py

if os.environ.get("STACKLAB_PURE") == "1":
    _kernel = _forest_py
    BACKEND = "python"
else:
    try:
        from . import _forest_ext as _kernel

        BACKEND = "cython"
    except ImportError:
        _kernel = _forest_py
        BACKEND = "python"

KERNELS = {"python": _forest_py}
if BACKEND == "cython":
    KERNELS["cython"] = _kernel


def kernel(name: str | None = None):
    if name is None:
        return _kernel
    if name not in KERNELS:
        raise ValueError(f"forest backend {name!r} is not available")
    return KERNELS[name]


def default_mtry(p: int) -> int:
    return int(math.ceil(math.sqrt(p)))


def grow_forest(X, y, n_trees, max_depth, min_leaf, mtry, rng, threads=1, backend=None,
                oob=False):
    """Fit ``n_trees`` bootstrap trees and return concatenated node arrays.

    Parameters
    ----------
    rng : RngStream
        Tree ``t`` draws its bootstrap and feature seed from
        ``rng.derive("tree", t)``, so results do not depend on ``threads``.
    oob : bool
        Also return the out-of-bag mean squared error.

    Returns
    -------
    arrays : dict
        ``feature``, ``threshold``, ``left``, ``right``, ``value``, ``roots``.
    oob_mse : float or None
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = X.shape
    kern = kernel(backend)
    order_all = _forest_py.presort(X)
    mtry = default_mtry(p) if mtry is None else int(mtry)

    def one(t):
        s = rng.derive("tree", t)
        counts = np.bincount(s.generator().integers(0, n, n), minlength=n).astype(float)
        tree = kern.build_tree(X, y, counts, order_all, int(max_depth), float(min_leaf),
                               mtry, s.derive("features").uint64())
        return counts, tree

    if threads > 1 and n_trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_trees)))
    else:
        results = [one(t) for t in range(n_trees)]

    feats, thrs, lefts, rights, vals, roots = [], [], [], [], [], []
    offset = 0
    for _, (f, th, lf, rt, v) in results:
        roots.append(offset)
        feats.append(f)
        thrs.append(th)
        lefts.append(np.where(lf >= 0, lf + offset, -1))
        rights.append(np.where(rt >= 0, rt + offset, -1))
        vals.append(v)
        offset += f.shape[0]
    arrays = {
        "feature": np.concatenate(feats),
        "threshold": np.concatenate(thrs),
        "left": np.concatenate(lefts),
        "right": np.concatenate(rights),
        "value": np.concatenate(vals),
        "roots": np.array(roots, dtype=np.int64),
    }
    oob_mse = None
    if oob:
        total = np.zeros(n)
        hits = np.zeros(n)
        for t, (counts, _) in enumerate(results):
            out = counts == 0
            if out.any():
                total[out] += kern.predict_forest(
                    X[out], arrays["feature"], arrays["threshold"], arrays["left"],
                    arrays["right"], arrays["value"], arrays["roots"][t:t + 1])
                hits[out] += 1
        seen = hits > 0
        oob_mse = float(np.mean((total[seen] / hits[seen] - y[seen]) ** 2)) if seen.any() else None
    return arrays, oob_mse


def predict_arrays(arrays, X, backend=None) -> np.ndarray:
    return kernel(backend).predict_forest(
        np.ascontiguousarray(X, dtype=float), arrays["feature"], arrays["threshold"],
        arrays["left"], arrays["right"], arrays["value"], arrays["roots"])
