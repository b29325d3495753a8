"""Bagged CART forest: bootstrap rows per tree, sqrt(p) feature subsampling
per split, gini / variance criteria.  The tree builder is numba-compiled; a
tree is four flat node arrays plus a leaf payload (majority class code or
leaf mean)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_UNLIMITED_DEPTH = 10 ** 9
_MIN_GAIN = 1e-12


@njit(cache=True)
def _insertion_sort(vals, order, lo, hi):
    for i in range(lo + 1, hi):
        key = order[i]
        kv = vals[key]
        j = i - 1
        while j >= lo and vals[order[j]] > kv:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = key


@njit(cache=True)
def _sort_indices(vals, order, size, qstack):
    """In-place index sort of order[:size] by vals (no allocations); quicksort
    with median-of-three pivots, insertion sort under 16 elements, smaller
    partition pushed so the explicit stack stays logarithmic."""
    for i in range(size):
        order[i] = i
    qstack[0, 0] = 0
    qstack[0, 1] = size
    top = 1
    while top > 0:
        top -= 1
        lo = qstack[top, 0]
        hi = qstack[top, 1]
        while hi - lo > 16:
            mid = (lo + hi) // 2
            a = vals[order[lo]]
            b = vals[order[mid]]
            c = vals[order[hi - 1]]
            if a > b:
                a, b = b, a
            if b > c:
                b = c
            if a > b:
                b = a
            pivot = b
            i = lo
            j = hi - 1
            while i <= j:
                while vals[order[i]] < pivot:
                    i += 1
                while vals[order[j]] > pivot:
                    j -= 1
                if i <= j:
                    tmp = order[i]
                    order[i] = order[j]
                    order[j] = tmp
                    i += 1
                    j -= 1
            if j + 1 - lo < hi - i:
                if lo < j + 1:
                    qstack[top, 0] = lo
                    qstack[top, 1] = j + 1
                    top += 1
                lo = i
            else:
                if i < hi:
                    qstack[top, 0] = i
                    qstack[top, 1] = hi
                    top += 1
                hi = j + 1
        _insertion_sort(vals, order, lo, hi)


@njit(cache=True)
def _grow_tree(X, y, classification, n_classes, max_depth, mtry, min_leaf, seed):
    np.random.seed(seed)
    n, p = X.shape
    idx = np.random.randint(0, n, n)  # bootstrap sample
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    stack = np.zeros((max_nodes, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    counts = np.zeros(n_classes)
    left_counts = np.zeros(n_classes)
    # node-local scratch, allocated once
    vals = np.empty(n)
    labels = np.empty(n)
    buf = np.empty(n, np.int64)
    order = np.empty(n, np.int64)
    qstack = np.empty(64, np.int64).reshape(32, 2)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        size = end - start

        tot_s = 0.0
        tot_s2 = 0.0
        if classification:
            counts[:] = 0.0
            for i in range(size):
                labels[i] = y[idx[start + i]]
                counts[int(labels[i])] += 1.0
            value[node] = float(np.argmax(counts))  # ties -> lowest code
            ssq = 0.0
            for c in range(n_classes):
                ssq += counts[c] * counts[c]
            parent_imp = size - ssq / size
        else:
            for i in range(size):
                v = y[idx[start + i]]
                labels[i] = v
                tot_s += v
                tot_s2 += v * v
            value[node] = tot_s / size
            parent_imp = tot_s2 - tot_s * tot_s / size

        if size < 2 * min_leaf or size < 2 or depth >= max_depth or parent_imp <= _MIN_GAIN:
            continue

        perm = np.random.permutation(p)
        best_gain = _MIN_GAIN
        best_f = -1
        best_thr = 0.0
        for t in range(mtry):
            f = perm[t]
            for i in range(size):
                vals[i] = X[idx[start + i], f]
            _sort_indices(vals, order, size, qstack)
            if classification:
                left_counts[:] = 0.0
                ssq_l = 0.0
                for i in range(size - 1):
                    c = int(labels[order[i]])
                    ssq_l += 2.0 * left_counts[c] + 1.0
                    left_counts[c] += 1.0
                    if vals[order[i]] >= vals[order[i + 1]]:
                        continue
                    nl = i + 1.0
                    nr = size - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    ssq_r = 0.0
                    for c2 in range(n_classes):
                        rc = counts[c2] - left_counts[c2]
                        ssq_r += rc * rc
                    child = (nl - ssq_l / nl) + (nr - ssq_r / nr)
                    gain = parent_imp - child
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_thr = 0.5 * (vals[order[i]] + vals[order[i + 1]])
            else:
                sl = 0.0
                sl2 = 0.0
                for i in range(size - 1):
                    v = labels[order[i]]
                    sl += v
                    sl2 += v * v
                    if vals[order[i]] >= vals[order[i + 1]]:
                        continue
                    nl = i + 1.0
                    nr = size - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    child = (sl2 - sl * sl / nl) \
                        + ((tot_s2 - sl2) - (tot_s - sl) * (tot_s - sl) / nr)
                    gain = parent_imp - child
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_thr = 0.5 * (vals[order[i]] + vals[order[i + 1]])

        if best_f < 0:
            continue
        # stable partition of idx[start:end] around the threshold
        nl_count = 0
        for i in range(start, end):
            if X[idx[i], best_f] <= best_thr:
                buf[nl_count] = idx[i]
                nl_count += 1
        pos = nl_count
        for i in range(start, end):
            if X[idx[i], best_f] > best_thr:
                buf[pos] = idx[i]
                pos += 1
        for i in range(size):
            idx[start + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes
        stack[top, 1] = start
        stack[top, 2] = start + nl_count
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = start + nl_count
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        n_nodes += 2

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


@njit(cache=True)
def _predict_tree(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


@dataclass
class ForestModel:
    trees: list
    classification: bool
    n_classes: int


def fit_forest(X: np.ndarray, y: np.ndarray, n_trees: int, classification: bool,
               seed: int, max_depth: int | None = None, min_leaf: int = 1,
               mtry: int | None = None) -> ForestModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, p = X.shape
    if n < 2 or p < 1:
        raise ValueError("need at least 2 rows and 1 feature")
    if mtry is None:
        mtry = max(1, int(np.sqrt(p)))
    n_classes = int(y.max()) + 1 if classification else 1
    yf = np.ascontiguousarray(y, dtype=np.float64)
    depth = _UNLIMITED_DEPTH if max_depth is None else max_depth
    seeds = np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint32)
    trees = [_grow_tree(X, yf, classification, n_classes, depth, min(mtry, p),
                        min_leaf, int(s)) for s in seeds]
    return ForestModel(trees, classification, n_classes)


def predict_forest(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Majority vote (ties -> lowest code) for classification, mean for
    regression."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    votes = np.stack([_predict_tree(*tree, X) for tree in model.trees])
    if not model.classification:
        return votes.mean(axis=0)
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        out[r] = np.argmax(np.bincount(votes[:, r].astype(np.int64),
                                       minlength=model.n_classes))
    return out
