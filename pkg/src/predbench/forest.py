"""Random forest for binary outcomes: probability predictions and Gini importance.

Trees are grown by a numba kernel for speed; all randomness (bootstrap rows,
per-node candidate features) is pre-drawn from a per-tree stream, so forests
are pure functions of (X, y, stream, params) and identical for any worker
count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .streams import RngStream

_NO_DEPTH_LIMIT = 2**30


@dataclass(frozen=True)
class ForestParams:
    """Fixed forest hyperparameters (no tuning in the protocol).

    mtry=None means floor(sqrt(p)), with a floor of 1.
    """

    n_trees: int = 500
    mtry: Optional[int] = None
    min_node_size: int = 10
    max_depth: Optional[int] = None
    bootstrap_fraction: float = 1.0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.bootstrap_fraction != 1.0:
            raise ValueError("only bootstrap fraction 1.0 (with replacement) is supported")

    def resolved_mtry(self, p: int) -> int:
        if self.mtry is not None:
            if not (1 <= self.mtry <= p):
                raise ValueError("need 1 <= mtry <= p")
            return self.mtry
        return max(1, int(math.floor(math.sqrt(p))))


@dataclass
class Forest:
    """Fitted forest, stored as flat node arrays (feature == -1 marks a leaf)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_frac: np.ndarray
    tree_offsets: np.ndarray
    params: ForestParams
    n_features: int
    raw_importance: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.tree_offsets) - 1


@dataclass
class ImportanceVector:
    raw: np.ndarray
    clamped: np.ndarray


@njit(cache=True)
def _grow_tree(X, y, boot_idx, mtry, min_node_size, max_depth,
               u_feat, feature, threshold, left, right, leaf_frac, imp,
               idx, scratch, pool, vals):
    n = boot_idx.shape[0]
    p = X.shape[1]
    for i in range(n):
        idx[i] = boot_idx[i]

    # explicit DFS stack: (start, end, node slot, depth)
    stack_start = np.empty(2 * n + 2, dtype=np.int64)
    stack_end = np.empty(2 * n + 2, dtype=np.int64)
    stack_slot = np.empty(2 * n + 2, dtype=np.int64)
    stack_depth = np.empty(2 * n + 2, dtype=np.int64)
    top = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_slot[0] = 0
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    attempts = 0

    while top > 0:
        top -= 1
        start = stack_start[top]
        end = stack_end[top]
        slot = stack_slot[top]
        depth = stack_depth[top]
        size = end - start
        pos = 0.0
        for i in range(start, end):
            pos += y[idx[i]]
        frac = pos / size
        gini_node = 2.0 * frac * (1.0 - frac)

        splittable = (
            size > min_node_size
            and pos > 0.0
            and pos < size
            and depth < max_depth
        )
        best_child = np.inf
        best_f = -1
        best_t = 0.0
        best_nl = 0
        if splittable:
            # mtry candidate features without replacement (partial Fisher-Yates
            # driven by pre-drawn uniforms)
            for j in range(p):
                pool[j] = j
            for t in range(mtry):
                r = t + int(u_feat[attempts, t] * (p - t))
                tmp = pool[t]
                pool[t] = pool[r]
                pool[r] = tmp
            attempts += 1

            for t in range(mtry):
                f = pool[t]
                for i in range(size):
                    vals[i] = X[idx[start + i], f]
                order = np.argsort(vals[:size])
                # prefix scan of positive labels over the sorted order
                pos_left = 0.0
                for k in range(size - 1):
                    row = idx[start + order[k]]
                    pos_left += y[row]
                    v_lo = vals[order[k]]
                    v_hi = vals[order[k + 1]]
                    if v_lo >= v_hi:
                        continue
                    mid = 0.5 * (v_lo + v_hi)
                    if mid <= v_lo or mid >= v_hi:
                        continue  # adjacent floats; midpoint collapsed
                    n_l = k + 1
                    n_r = size - n_l
                    f_l = pos_left / n_l
                    f_r = (pos - pos_left) / n_r
                    child = (
                        n_l * 2.0 * f_l * (1.0 - f_l)
                        + n_r * 2.0 * f_r * (1.0 - f_r)
                    ) / size
                    better = False
                    if child < best_child:
                        better = True
                    elif child == best_child:
                        if f < best_f or (f == best_f and mid < best_t):
                            better = True
                    if better:
                        best_child = child
                        best_f = f
                        best_t = mid
                        best_nl = n_l

        if best_f >= 0 and best_child < gini_node:
            imp[best_f] += (size / n) * (gini_node - best_child)
            # stable partition by x <= threshold
            nl = 0
            nr = 0
            for i in range(start, end):
                if X[idx[i], best_f] <= best_t:
                    idx[start + nl] = idx[i]
                    nl += 1
                else:
                    scratch[nr] = idx[i]
                    nr += 1
            for i in range(nr):
                idx[start + nl + i] = scratch[i]
            left_slot = n_nodes
            right_slot = n_nodes + 1
            n_nodes += 2
            feature[slot] = best_f
            threshold[slot] = best_t
            left[slot] = left_slot
            right[slot] = right_slot
            leaf_frac[slot] = frac
            stack_start[top] = start
            stack_end[top] = start + best_nl
            stack_slot[top] = left_slot
            stack_depth[top] = depth + 1
            top += 1
            stack_start[top] = start + best_nl
            stack_end[top] = end
            stack_slot[top] = right_slot
            stack_depth[top] = depth + 1
            top += 1
        else:
            feature[slot] = -1
            threshold[slot] = 0.0
            left[slot] = -1
            right[slot] = -1
            leaf_frac[slot] = frac

    return n_nodes


@njit(cache=True)
def _predict_kernel(X, feature, threshold, left, right, leaf_frac, offsets, out):
    n_rows = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for i in range(n_rows):
        acc = 0.0
        for t in range(n_trees):
            node = offsets[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = offsets[t] + left[node]
                else:
                    node = offsets[t] + right[node]
            acc += leaf_frac[node]
        out[i] = acc / n_trees


def fit_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    stream: RngStream,
    params: Optional[ForestParams] = None,
) -> Forest:
    """Grow a probability forest on bootstrap resamples drawn from the stream."""
    params = params or ForestParams()
    X = np.ascontiguousarray(X, dtype=np.float64)
    yf = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if len(yf) != n:
        raise ValueError("X and y row counts differ")
    mtry = params.resolved_mtry(p)
    max_depth = params.max_depth if params.max_depth is not None else _NO_DEPTH_LIMIT

    cap = 2 * n + 1
    features, thresholds, lefts, rights, fracs = [], [], [], [], []
    offsets = np.zeros(params.n_trees + 1, dtype=np.int64)
    imp = np.zeros(p)

    idx = np.empty(n, dtype=np.int64)
    scratch = np.empty(n, dtype=np.int64)
    pool = np.empty(p, dtype=np.int64)
    vals = np.empty(n, dtype=np.float64)

    for t in range(params.n_trees):
        ts = stream.child(t)
        boot = np.floor(ts.gen.random(n) * n).astype(np.int64)
        u_feat = ts.gen.random((2 * n + 2, mtry))
        feat = np.empty(cap, dtype=np.int32)
        thr = np.empty(cap, dtype=np.float64)
        lf = np.empty(cap, dtype=np.int32)
        rt = np.empty(cap, dtype=np.int32)
        frac = np.empty(cap, dtype=np.float64)
        n_nodes = _grow_tree(
            X, yf, boot, mtry, params.min_node_size, max_depth,
            u_feat, feat, thr, lf, rt, frac, imp,
            idx, scratch, pool, vals,
        )
        features.append(feat[:n_nodes].copy())
        thresholds.append(thr[:n_nodes].copy())
        lefts.append(lf[:n_nodes].copy())
        rights.append(rt[:n_nodes].copy())
        fracs.append(frac[:n_nodes].copy())
        offsets[t + 1] = offsets[t] + n_nodes

    return Forest(
        feature=np.concatenate(features),
        threshold=np.concatenate(thresholds),
        left=np.concatenate(lefts),
        right=np.concatenate(rights),
        leaf_frac=np.concatenate(fracs),
        tree_offsets=offsets,
        params=params,
        n_features=p,
        raw_importance=imp / params.n_trees,
    )


def predict_forest(forest: Forest, X_new: np.ndarray) -> np.ndarray:
    """Average the reached leaf's class-1 fraction over all trees."""
    X_new = np.ascontiguousarray(X_new, dtype=np.float64)
    if X_new.ndim != 2 or X_new.shape[1] != forest.n_features:
        raise ValueError(
            f"expected {forest.n_features} columns, got {X_new.shape[1] if X_new.ndim == 2 else X_new.shape}"
        )
    out = np.empty(X_new.shape[0])
    _predict_kernel(
        X_new, forest.feature, forest.threshold, forest.left, forest.right,
        forest.leaf_frac, forest.tree_offsets, out,
    )
    return out


def gini_importance(forest: Forest) -> ImportanceVector:
    """Mean decrease in Gini impurity per variable, plus its nonnegative clamp.

    The clamp is a no-op for impurity decreases from this implementation (they
    are >= 0 by construction) but stays in place because downstream weights
    are defined for general importance measures.
    """
    raw = forest.raw_importance.copy()
    return ImportanceVector(raw=raw, clamped=np.maximum(raw, 0.0))
