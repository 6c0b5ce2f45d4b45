"""Flat-array regression trees with numba kernels.

Trees are stored as parallel arrays (feature, threshold, children, value);
leaves have feature == -1. An ensemble concatenates the per-tree arrays and
keeps offsets, so prediction is one tight loop over (row, tree).

Split search maximizes squared-error reduction. Ties are broken toward the
lower feature index and then the lower threshold, so fits are reproducible
bit for bit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_LEAF = -1


@njit(cache=True, nogil=True)
def _best_split(X, rows, resid, min_leaf):
    """Best (feature, threshold, gain) for the rows of one node.

    gain is the decrease in total SSE; 0.0 means no admissible split.
    Candidate thresholds are midpoints between consecutive distinct values.
    """
    m = rows.shape[0]
    p = X.shape[1]
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    total = 0.0
    for i in range(m):
        total += resid[rows[i]]
    base = total * total / m
    vals = np.empty(m)
    for feat in range(p):
        for i in range(m):
            vals[i] = X[rows[i], feat]
        order = np.argsort(vals, kind="mergesort")
        left_sum = 0.0
        for cut in range(m - 1):
            r = rows[order[cut]]
            left_sum += resid[r]
            v_lo = vals[order[cut]]
            v_hi = vals[order[cut + 1]]
            if v_lo >= v_hi:
                continue
            n_left = cut + 1
            n_right = m - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            right_sum = total - left_sum
            gain = left_sum * left_sum / n_left + right_sum * right_sum / n_right - base
            if gain > best_gain:
                best_gain = gain
                best_feat = feat
                best_thr = 0.5 * (v_lo + v_hi)
    return best_feat, best_thr, best_gain


@njit(cache=True, nogil=True)
def _grow(X, rows, resid, max_depth, min_leaf, feat_out, thr_out, left_out, right_out, val_out):
    """Grow one depth-limited tree in place; returns the node count.

    Uses an explicit stack over (node, lo, hi, depth) slices of a workspace
    index array that is partitioned as splits are found.
    """
    max_nodes = feat_out.shape[0]
    work = rows.copy()
    n_nodes = 1
    # stack entries: node id, lo, hi, depth
    stack = np.empty((max_nodes, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = work.shape[0]
    stack[0, 3] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]
        depth = stack[top, 3]
        seg = work[lo:hi]
        m = hi - lo
        s = 0.0
        for i in range(m):
            s += resid[seg[i]]
        mean_val = s / m
        make_leaf = depth >= max_depth or m < 2 * min_leaf or m < 2
        if not make_leaf:
            feat, thr, gain = _best_split(X, seg, resid, min_leaf)
            if feat < 0 or gain <= 0.0:
                make_leaf = True
        if make_leaf:
            feat_out[node] = _LEAF
            thr_out[node] = 0.0
            left_out[node] = -1
            right_out[node] = -1
            val_out[node] = mean_val
            continue
        # partition the workspace: left block gets rows with value <= thr
        i = lo
        j = hi - 1
        while i <= j:
            if X[work[i], feat] <= thr:
                i += 1
            else:
                tmp = work[i]
                work[i] = work[j]
                work[j] = tmp
                j -= 1
        mid = i
        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        feat_out[node] = feat
        thr_out[node] = thr
        left_out[node] = left_id
        right_out[node] = right_id
        val_out[node] = mean_val
        stack[top, 0] = left_id
        stack[top, 1] = lo
        stack[top, 2] = mid
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = right_id
        stack[top, 1] = mid
        stack[top, 2] = hi
        stack[top, 3] = depth + 1
        top += 1
    return n_nodes


@njit(cache=True, nogil=True)
def _predict_tree(X, feat, thr, left, right, val, out):
    for i in range(X.shape[0]):
        node = 0
        while feat[node] != _LEAF:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = val[node]


@njit(cache=True, nogil=True)
def _predict_ensemble(X, feat, thr, left, right, val, offsets, lr, base, out):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for i in range(n):
        acc = base
        for t in range(n_trees):
            node = offsets[t]
            while feat[node] != _LEAF:
                if X[i, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += lr * val[node]
        out[i] = acc


class TreeEnsemble:
    """Boosted ensemble state: concatenated flat trees plus base prediction."""

    def __init__(self, base: float, learning_rate: float, n_features: int):
        self.base = float(base)
        self.learning_rate = float(learning_rate)
        self.n_features = n_features
        self._feat = []
        self._thr = []
        self._left = []
        self._right = []
        self._val = []
        self._packed = None

    def add_tree(self, feat, thr, left, right, val):
        self._feat.append(feat)
        self._thr.append(thr)
        self._left.append(left)
        self._right.append(right)
        self._val.append(val)
        self._packed = None

    def _pack(self):
        if self._packed is None:
            offsets = np.zeros(len(self._feat) + 1, dtype=np.int64)
            for t, f in enumerate(self._feat):
                offsets[t + 1] = offsets[t] + f.shape[0]
            feat = np.concatenate(self._feat)
            thr = np.concatenate(self._thr)
            val = np.concatenate(self._val)
            # child pointers are tree-local; shift them to the packed layout
            left = np.concatenate(
                [np.where(l >= 0, l + offsets[t], l) for t, l in enumerate(self._left)]
            )
            right = np.concatenate(
                [np.where(r >= 0, r + offsets[t], r) for t, r in enumerate(self._right)]
            )
            self._packed = (feat, thr, left, right, val, offsets)
        return self._packed

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        if not self._feat:
            out[:] = self.base
            return out
        feat, thr, left, right, val, offsets = self._pack()
        _predict_ensemble(X, feat, thr, left, right, val, offsets, self.learning_rate, self.base, out)
        return out

    @property
    def n_trees(self) -> int:
        return len(self._feat)

    @property
    def used_features(self) -> frozenset[int]:
        used = set()
        for f in self._feat:
            used.update(int(v) for v in f[f >= 0])
        return frozenset(used)


def grow_tree(X: np.ndarray, rows: np.ndarray, resid: np.ndarray, max_depth: int, min_leaf: int):
    """Fit one tree on the given rows; returns trimmed flat arrays."""
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.empty(max_nodes, dtype=np.int64)
    thr = np.empty(max_nodes, dtype=np.float64)
    left = np.empty(max_nodes, dtype=np.int64)
    right = np.empty(max_nodes, dtype=np.int64)
    val = np.empty(max_nodes, dtype=np.float64)
    n_nodes = _grow(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(rows, dtype=np.int64),
        np.ascontiguousarray(resid, dtype=np.float64),
        max_depth,
        min_leaf,
        feat,
        thr,
        left,
        right,
        val,
    )
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        val[:n_nodes].copy(),
    )
