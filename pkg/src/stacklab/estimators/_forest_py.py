"""Pure numpy regression-tree kernel.

Produces bit-identical trees and predictions to the compiled kernel in
``_forest_ext.pyx``: every floating-point reduction is an explicit
sequential cumulative sum, and feature subsets come from the same
splitmix64 sequence.
"""

import numpy as np

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def presort(X):
    """Stable per-feature argsort, shape ``(p, n)``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def build_tree(X, y, w, order_all, max_depth, min_leaf, mtry, seed):
    """Grow one weighted CART regression tree.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    y : ndarray, shape (n,)
    w : ndarray, shape (n,)
        Non-negative sample weights (bootstrap counts).
    order_all : ndarray, shape (p, n)
        Output of :func:`presort`.
    max_depth : int
    min_leaf : float
        Minimum total weight on each side of a split.
    mtry : int
        Features examined per node.
    seed : int
        splitmix64 seed for feature subsets.

    Returns
    -------
    feature, threshold, left, right, value : ndarray
        Node arrays; leaves have ``feature == -1``.
    """
    n, p = X.shape
    keep = w[order_all] > 0
    m = int(keep[0].sum())
    order = order_all[keep].reshape(p, m).copy()
    rng = SplitMix64(seed)
    wy = w * y
    mtry = max(1, min(int(mtry), p))

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), 0, m, 0)]
    while stack:
        node, start, end, depth = stack.pop()
        idx0 = order[0, start:end]
        W = np.cumsum(w[idx0])[-1]
        S = np.cumsum(wy[idx0])[-1]
        ys = y[idx0]
        # pure node: store the label itself, not a rounded weighted mean
        value[node] = float(ys[0]) if np.all(ys == ys[0]) else S / W
        if depth >= max_depth or W < 2.0 * min_leaf:
            continue
        perm = list(range(p))
        for i in range(mtry):
            j = i + rng.next() % (p - i)
            perm[i], perm[j] = perm[j], perm[i]
        best = -np.inf
        best_f = -1
        best_pos = -1
        for f in perm[:mtry]:
            idx = order[f, start:end]
            xs = X[idx, f]
            wl = np.cumsum(w[idx])[:-1]
            sl = np.cumsum(wy[idx])[:-1]
            wr = W - wl
            sr = S - sl
            ok = (xs[1:] > xs[:-1]) & (wl >= min_leaf) & (wr >= min_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                score = sl * sl / wl + sr * sr / wr
            score = np.where(ok, score, -np.inf)
            k = int(np.argmax(score))
            if score[k] > best:
                best, best_f, best_pos = score[k], f, k
        parent = S * S / W
        if best_f < 0 or not best > parent + 1e-12 * (abs(parent) + 1.0):
            continue
        seg = order[best_f, start:end]
        v = X[seg[best_pos], best_f]
        vn = X[seg[best_pos + 1], best_f]
        thr = 0.5 * (v + vn)
        if thr >= vn:
            thr = v
        block = order[:, start:end]
        goes_left = X[block, best_f] <= thr
        order[:, start:end] = np.take_along_axis(
            block, np.argsort(~goes_left, axis=1, kind="stable"), axis=1)
        nl = best_pos + 1
        feature[node] = best_f
        threshold[node] = thr
        lc = new_node()
        rc = new_node()
        left[node], right[node] = lc, rc
        stack.append((rc, start + nl, end, depth + 1))
        stack.append((lc, start, start + nl, depth + 1))

    return (np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            np.array(value, dtype=float))


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Mean prediction over trees stored in concatenated node arrays.

    ``roots[t]`` is the global index of tree ``t``'s root; child indices are
    global too.
    """
    X = np.ascontiguousarray(X, dtype=float)
    n = X.shape[0]
    acc = np.zeros(n)
    rows = np.arange(n)
    # running mean: exact when every tree agrees
    for t, r in enumerate(roots, 1):
        node = np.full(n, r, dtype=np.int64)
        while True:
            f = feature[node]
            inner = f >= 0
            if not inner.any():
                break
            ni = node[inner]
            go_left = X[rows[inner], f[inner]] <= threshold[ni]
            node[inner] = np.where(go_left, left[ni], right[ni])
        acc += (value[node] - acc) / t
    return acc
