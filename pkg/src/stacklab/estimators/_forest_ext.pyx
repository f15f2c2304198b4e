# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled regression-tree kernel; mirrors ``_forest_py`` operation for
operation so both produce identical floating-point results."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.math cimport INFINITY
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline uint64_t splitmix_next(uint64_t* state) noexcept nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef struct Frame:
    int64_t node
    int64_t start
    int64_t end
    int64_t depth


cdef int64_t grow(const double[:, ::1] X, const double[::1] y, const double[::1] w,
                  int64_t[:, ::1] order, int64_t m, int64_t max_depth, double min_leaf,
                  int64_t mtry, uint64_t seed,
                  int64_t* feature, double* threshold, int64_t* left, int64_t* right,
                  double* value) noexcept nogil:
    cdef int64_t p = X.shape[1]
    cdef int64_t n_nodes = 1
    cdef int64_t top = 0
    cdef int pure
    cdef Frame* stack = <Frame*> malloc((2 * m + 2) * sizeof(Frame))
    cdef int64_t* perm = <int64_t*> malloc(p * sizeof(int64_t))
    cdef int64_t* buf = <int64_t*> malloc((m + 1) * sizeof(int64_t))
    cdef uint64_t state = seed
    cdef Frame fr
    cdef int64_t node, start, end, depth, i, j, k, f, t, r, idx, nl, best_f, best_pos
    cdef int64_t a, b
    cdef double W, S, wl, sl, wr, sr, score, best, parent, v, vn, thr, xv

    feature[0] = -1
    left[0] = -1
    right[0] = -1
    threshold[0] = 0.0
    value[0] = 0.0
    stack[0].node = 0
    stack[0].start = 0
    stack[0].end = m
    stack[0].depth = 0
    top = 1
    while top > 0:
        top -= 1
        fr = stack[top]
        node = fr.node
        start = fr.start
        end = fr.end
        depth = fr.depth
        W = 0.0
        S = 0.0
        pure = 1
        for i in range(start, end):
            idx = order[0, i]
            W = W + w[idx]
            S = S + w[idx] * y[idx]
            if y[idx] != y[order[0, start]]:
                pure = 0
        # pure node: store the label itself, not a rounded weighted mean
        value[node] = y[order[0, start]] if pure else S / W
        if depth >= max_depth or W < 2.0 * min_leaf:
            continue
        for i in range(p):
            perm[i] = i
        for i in range(mtry):
            j = i + <int64_t>(splitmix_next(&state) % <uint64_t>(p - i))
            t = perm[i]
            perm[i] = perm[j]
            perm[j] = t
        best = -INFINITY
        best_f = -1
        best_pos = -1
        for k in range(mtry):
            f = perm[k]
            wl = 0.0
            sl = 0.0
            for i in range(start, end - 1):
                idx = order[f, i]
                wl = wl + w[idx]
                sl = sl + w[idx] * y[idx]
                if not (X[order[f, i + 1], f] > X[idx, f]):
                    continue
                wr = W - wl
                if wl < min_leaf or wr < min_leaf:
                    continue
                sr = S - sl
                score = sl * sl / wl + sr * sr / wr
                if score > best:
                    best = score
                    best_f = f
                    best_pos = i - start
        parent = S * S / W
        if best_f < 0 or not (best > parent + 1e-12 * (abs(parent) + 1.0)):
            continue
        v = X[order[best_f, start + best_pos], best_f]
        vn = X[order[best_f, start + best_pos + 1], best_f]
        thr = 0.5 * (v + vn)
        if thr >= vn:
            thr = v
        nl = best_pos + 1
        for r in range(p):
            a = 0
            b = 0
            for i in range(start, end):
                idx = order[r, i]
                if X[idx, best_f] <= thr:
                    order[r, start + a] = idx
                    a += 1
                else:
                    buf[b] = idx
                    b += 1
            for i in range(b):
                order[r, start + a + i] = buf[i]
        feature[node] = best_f
        threshold[node] = thr
        for t in range(2):
            feature[n_nodes + t] = -1
            left[n_nodes + t] = -1
            right[n_nodes + t] = -1
            threshold[n_nodes + t] = 0.0
            value[n_nodes + t] = 0.0
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top].node = n_nodes + 1
        stack[top].start = start + nl
        stack[top].end = end
        stack[top].depth = depth + 1
        top += 1
        stack[top].node = n_nodes
        stack[top].start = start
        stack[top].end = start + nl
        stack[top].depth = depth + 1
        top += 1
        n_nodes += 2
    free(stack)
    free(perm)
    free(buf)
    return n_nodes


def build_tree(X, y, w, order_all, max_depth, min_leaf, mtry, seed):
    """Grow one weighted CART regression tree (see ``_forest_py.build_tree``)."""
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int64_t p = Xv.shape[1]
    keep = np.asarray(w)[order_all] > 0
    cdef int64_t m = int(keep[0].sum())
    order_np = np.ascontiguousarray(np.asarray(order_all)[keep].reshape(p, m), dtype=np.int64)
    cdef int64_t[:, ::1] order = order_np
    cdef int64_t cap = 2 * m + 1
    feat = np.empty(cap, dtype=np.int64)
    thr = np.empty(cap, dtype=np.float64)
    lft = np.empty(cap, dtype=np.int64)
    rgt = np.empty(cap, dtype=np.int64)
    val = np.empty(cap, dtype=np.float64)
    cdef int64_t[::1] fv = feat
    cdef double[::1] tv = thr
    cdef int64_t[::1] lv = lft
    cdef int64_t[::1] rv = rgt
    cdef double[::1] vv = val
    cdef int64_t md = max_depth
    cdef double ml = min_leaf
    cdef int64_t mt = max(1, min(int(mtry), p))
    cdef uint64_t sd = int(seed) & ((1 << 64) - 1)
    cdef int64_t nn
    with nogil:
        nn = grow(Xv, yv, wv, order, m, md, ml, mt, sd,
                  &fv[0], &tv[0], &lv[0], &rv[0], &vv[0])
    return feat[:nn].copy(), thr[:nn].copy(), lft[:nn].copy(), rgt[:nn].copy(), val[:nn].copy()


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Mean prediction over trees in concatenated node arrays."""
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const int64_t[::1] fv = np.ascontiguousarray(feature, dtype=np.int64)
    cdef const double[::1] tv = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef const int64_t[::1] lv = np.ascontiguousarray(left, dtype=np.int64)
    cdef const int64_t[::1] rv = np.ascontiguousarray(right, dtype=np.int64)
    cdef const double[::1] vv = np.ascontiguousarray(value, dtype=np.float64)
    cdef const int64_t[::1] rts = np.ascontiguousarray(roots, dtype=np.int64)
    cdef int64_t n = Xv.shape[0]
    cdef int64_t T = rts.shape[0]
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] acc = out
    cdef int64_t t, i, node, f
    with nogil:
        for t in range(T):
            for i in range(n):
                node = rts[t]
                f = fv[node]
                while f >= 0:
                    if Xv[i, f] <= tv[node]:
                        node = lv[node]
                    else:
                        node = rv[node]
                    f = fv[node]
                # running mean: exact when every tree agrees
                acc[i] = acc[i] + (vv[node] - acc[i]) / (t + 1)
    return out
