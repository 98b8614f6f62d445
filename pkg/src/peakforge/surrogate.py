"""Regression-forest surrogate: predicted mean and ensemble spread.

Trees use axis-aligned variance-reduction splits over a random subset of
``ceil(d/2)`` candidate dimensions per node. All randomness (bootstrap rows
and per-node dimension subsets) is drawn up front with numpy, so the numba
and numpy builders grow bit-identical trees from the same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel

LEAF = -1


class SurrogateError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 50
    max_depth: int = 12
    min_leaf: int = 3
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise SurrogateError(f"invalid forest parameters {self}")


@dataclass(frozen=True)
class RegressionForest:
    """Fitted forest; node arrays are (n_trees, max_nodes), leaves have feature == -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    node_count: np.ndarray
    n_features: int
    params: ForestParams
    seed: int

    @property
    def n_trees(self) -> int:
        return self.feature.shape[0]

    def predict(self, x: np.ndarray) -> tuple[float, float]:
        mean, std = self.predict_many(np.asarray(x, dtype=float)[None, :])
        return float(mean[0]), float(std[0])

    def predict_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SurrogateError(f"input has shape {X.shape}, forest expects (n, {self.n_features})")
        per_tree = self.tree_predictions(X)
        mean = per_tree.mean(axis=0)
        if self.n_trees == 1:
            return mean, np.zeros(len(X))
        return mean, per_tree.std(axis=0, ddof=1)

    def tree_predictions(self, X: np.ndarray) -> np.ndarray:
        kernel = _accel.pick(_predict_numba, _predict_numpy)
        return kernel(self.feature, self.threshold, self.left, self.right, self.value, np.ascontiguousarray(X, dtype=float))

    def depth(self, tree: int) -> int:
        """Depth of one tree (root-only tree has depth 0)."""
        best = 0
        stack = [(0, 0)]
        while stack:
            node, dep = stack.pop()
            best = max(best, dep)
            if self.feature[tree, node] != LEAF:
                stack.append((self.left[tree, node], dep + 1))
                stack.append((self.right[tree, node], dep + 1))
        return best


# -- tree growing -------------------------------------------------------


@_accel.njit
def _grow_numba(X, y, rows_all, keys, n_sub, max_depth, min_leaf, feature, threshold, left, right, value, node_count):
    n_trees, n = rows_all.shape
    stack_node = np.empty(keys.shape[1], dtype=np.int64)
    stack_start = np.empty(keys.shape[1], dtype=np.int64)
    stack_end = np.empty(keys.shape[1], dtype=np.int64)
    stack_depth = np.empty(keys.shape[1], dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    xs = np.empty(n)
    ys = np.empty(n)
    csum = np.empty(n)
    for t in range(n_trees):
        rows = rows_all[t].copy()
        top = 0
        stack_node[0] = 0
        stack_start[0] = 0
        stack_end[0] = n
        stack_depth[0] = 0
        top = 1
        next_id = 1
        while top > 0:
            top -= 1
            node = stack_node[top]
            start = stack_start[top]
            end = stack_end[top]
            depth = stack_depth[top]
            m = end - start
            s = 0.0
            ymin = np.inf
            ymax = -np.inf
            for i in range(start, end):
                v = y[rows[i]]
                s += v
                if v < ymin:
                    ymin = v
                if v > ymax:
                    ymax = v
            value[t, node] = s / m
            feature[t, node] = -1
            if depth >= max_depth or m < 2 * min_leaf or ymin == ymax:
                continue
            cand = np.argsort(keys[t, node], kind="mergesort")[:n_sub]
            best_score = -np.inf
            best_f = -1
            best_thr = 0.0
            for c in range(n_sub):
                f = cand[c]
                for i in range(m):
                    xs[i] = X[rows[start + i], f]
                order = np.argsort(xs[:m], kind="mergesort")
                acc = 0.0
                for i in range(m):
                    ys[i] = y[rows[start + order[i]]]
                    acc += ys[i]
                    csum[i] = acc
                total = csum[m - 1]
                for i in range(min_leaf - 1, m - min_leaf):
                    a = xs[order[i]]
                    b = xs[order[i + 1]]
                    if a < b:
                        nl = i + 1
                        nr = m - nl
                        sl = csum[i]
                        sr = total - sl
                        score = sl * sl / nl + sr * sr / nr
                        if score > best_score:
                            best_score = score
                            best_f = f
                            thr = 0.5 * (a + b)
                            if not thr < b:
                                thr = a
                            best_thr = thr
            if best_f < 0:
                continue
            # stable partition of rows[start:end] by X[., best_f] <= best_thr
            nl = 0
            for i in range(start, end):
                if X[rows[i], best_f] <= best_thr:
                    buf[nl] = rows[i]
                    nl += 1
            k = nl
            for i in range(start, end):
                if not X[rows[i], best_f] <= best_thr:
                    buf[k] = rows[i]
                    k += 1
            for i in range(m):
                rows[start + i] = buf[i]
            feature[t, node] = best_f
            threshold[t, node] = best_thr
            lid = next_id
            rid = next_id + 1
            next_id += 2
            left[t, node] = lid
            right[t, node] = rid
            # push right first so the left child is grown first
            stack_node[top] = rid
            stack_start[top] = start + nl
            stack_end[top] = end
            stack_depth[top] = depth + 1
            top += 1
            stack_node[top] = lid
            stack_start[top] = start
            stack_end[top] = start + nl
            stack_depth[top] = depth + 1
            top += 1
        node_count[t] = next_id


def _grow_numpy(X, y, rows_all, keys, n_sub, max_depth, min_leaf, feature, threshold, left, right, value, node_count):
    n_trees, n = rows_all.shape
    for t in range(n_trees):
        rows = rows_all[t].copy()
        stack = [(0, 0, n, 0)]
        next_id = 1
        while stack:
            node, start, end, depth = stack.pop()
            seg = rows[start:end]
            ys_node = y[seg]
            m = end - start
            value[t, node] = np.cumsum(ys_node)[-1] / m
            feature[t, node] = LEAF
            if depth >= max_depth or m < 2 * min_leaf or ys_node.min() == ys_node.max():
                continue
            cand = np.argsort(keys[t, node], kind="mergesort")[:n_sub]
            best_score, best_f, best_thr = -np.inf, -1, 0.0
            lo, hi = min_leaf - 1, m - min_leaf
            for f in cand:
                xs = X[seg, f]
                order = np.argsort(xs, kind="mergesort")
                xs_s = xs[order]
                csum = np.cumsum(ys_node[order])
                total = csum[-1]
                i = np.arange(lo, hi)
                valid = xs_s[i] < xs_s[i + 1]
                if not valid.any():
                    continue
                nl = (i + 1).astype(float)
                sl = csum[i]
                sr = total - sl
                score = sl * sl / nl + sr * sr / (m - nl)
                score[~valid] = -np.inf
                j = int(np.argmax(score))
                if score[j] > best_score:
                    a, b = xs_s[i[j]], xs_s[i[j] + 1]
                    thr = 0.5 * (a + b)
                    if not thr < b:
                        thr = a
                    best_score, best_f, best_thr = score[j], int(f), thr
            if best_f < 0:
                continue
            go_left = X[seg, best_f] <= best_thr
            nl = int(go_left.sum())
            rows[start:end] = np.concatenate([seg[go_left], seg[~go_left]])
            feature[t, node] = best_f
            threshold[t, node] = best_thr
            lid, rid = next_id, next_id + 1
            next_id += 2
            left[t, node], right[t, node] = lid, rid
            stack.append((rid, start + nl, end, depth + 1))
            stack.append((lid, start, start + nl, depth + 1))
        node_count[t] = next_id


@_accel.njit
def _predict_numba(feature, threshold, left, right, value, X):
    n_trees = feature.shape[0]
    out = np.empty((n_trees, X.shape[0]))
    for t in range(n_trees):
        for i in range(X.shape[0]):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[t, i] = value[t, node]
    return out


def _predict_numpy(feature, threshold, left, right, value, X):
    n_trees = feature.shape[0]
    out = np.empty((n_trees, X.shape[0]))
    rows = np.arange(X.shape[0])
    for t in range(n_trees):
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = feature[t, node]
            active = f >= 0
            if not active.any():
                break
            fa = f[active]
            go_left = X[rows[active], fa] <= threshold[t, node[active]]
            node[active] = np.where(go_left, left[t, node[active]], right[t, node[active]])
        out[t] = value[t, node]
    return out


def _as_seed(rng_state) -> int:
    if isinstance(rng_state, np.random.Generator):
        return int(rng_state.integers(2**63 - 1))
    return int(rng_state)


def fit(
    inputs: np.ndarray,
    targets: np.ndarray,
    params: ForestParams = ForestParams(),
    rng_state: int | np.random.Generator = 0,
    *,
    use_numba: bool | None = None,
) -> RegressionForest:
    """Fit a regression forest on rows of ``inputs`` (unit-cube encoded)."""
    X = np.ascontiguousarray(inputs, dtype=float)
    y = np.ascontiguousarray(targets, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise SurrogateError(f"inputs {X.shape} and targets {y.shape} are inconsistent")
    n, d = X.shape
    if n < 2:
        raise SurrogateError(f"need at least 2 training rows, got {n}")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise SurrogateError("training data must be finite")
    seed = _as_seed(rng_state)
    n_sub = max(1, math.ceil(d / 2))
    max_nodes = 2 * n - 1
    T = params.n_trees
    rows_all = np.empty((T, n), dtype=np.int64)
    keys = np.empty((T, max_nodes, d))
    for t, child in enumerate(np.random.SeedSequence(seed).spawn(T)):
        g = np.random.default_rng(child)
        rows_all[t] = g.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        keys[t] = g.random((max_nodes, d))
    feature = np.full((T, max_nodes), LEAF, dtype=np.int64)
    threshold = np.zeros((T, max_nodes))
    left = np.full((T, max_nodes), LEAF, dtype=np.int64)
    right = np.full((T, max_nodes), LEAF, dtype=np.int64)
    value = np.zeros((T, max_nodes))
    node_count = np.zeros(T, dtype=np.int64)
    if use_numba is None:
        grow = _accel.pick(_grow_numba, _grow_numpy)
    else:
        grow = _grow_numba if use_numba else _grow_numpy
    grow(X, y, rows_all, keys, n_sub, params.max_depth, params.min_leaf, feature, threshold, left, right, value, node_count)
    width = int(node_count.max())
    return RegressionForest(
        feature=feature[:, :width].copy(),
        threshold=threshold[:, :width].copy(),
        left=left[:, :width].copy(),
        right=right[:, :width].copy(),
        value=value[:, :width].copy(),
        node_count=node_count,
        n_features=d,
        params=params,
        seed=seed,
    )


def predict(forest: RegressionForest, x: np.ndarray) -> tuple[float, float]:
    return forest.predict(x)
