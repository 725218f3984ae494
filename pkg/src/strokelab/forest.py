"""Random forest of Gini CART trees, compiled with numba.

Each tree draws its bootstrap and its per-node feature subsets from its own
splitmix64 stream seeded by (seed, tree index), so the forest is the same
whatever the number of threads that built it. Split search is exact: the
weighted Gini criterion is compared as an integer fraction, ties going to
the lowest feature index and then the lowest threshold.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct

import numba
import numpy as np
from numba import njit, prange
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._util import n_threads

# the default layer search probes TBB first and warns when it is too old; the
# built-in work queue is enough for a per-tree parallel loop
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
LEAF = -1


@njit(cache=True)
def _splitmix(state):
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True)
def _below(state, n):
    """Uniform integer in [0, n) from the top 53 bits."""
    state, z = _splitmix(state)
    u = float(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    k = int(u * n)
    return state, min(k, n - 1)


@njit(cache=True)
def tree_seed(seed, tree):
    """Starting state of tree ``tree``: output number ``tree`` of the splitmix
    stream seeded with ``seed`` (splitmix outputs are counter based)."""
    _, z = _splitmix(np.uint64(seed) + np.uint64(tree) * _GOLDEN)
    return z


@njit(cache=True)
def _better(num, den, f, thr, bnum, bden, bf, bthr):
    # criterion num/den is maximised; compare as integer fractions
    lhs = num * bden
    rhs = bnum * den
    if lhs != rhs:
        return lhs > rhs
    if f != bf:
        return f < bf
    return thr < bthr


@njit(cache=True)
def _grow(X, y, ranked, counts, max_features, min_leaf, max_depth, state,
          feat, thr, left, right, value):
    """Grow one tree into the given node arrays; returns the node count.

    ``ranked[:, f]`` lists sample indices in ascending order of feature f, so
    a node's split scan is a filtered walk instead of a sort.
    """
    n, p = X.shape
    node_of = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if counts[i] > 0:
            node_of[i] = 0
    stack = np.empty((2 * n + 2, 2), dtype=np.int64)  # (node, depth)
    stack[0, 0] = 0
    stack[0, 1] = 0
    top = 1
    n_nodes = 1
    perm = np.arange(p)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        depth = stack[top, 1]
        w_tot = 0
        w_pos = 0
        for i in range(n):
            if node_of[i] == node:
                w_tot += counts[i]
                w_pos += counts[i] * y[i]
        value[node] = w_pos / w_tot
        feat[node] = LEAF
        if w_pos == 0 or w_pos == w_tot or w_tot < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue
        # features in random order; the first max_features are examined, more
        # only if none of those admits a split
        for k in range(p):
            perm[k] = k
        for k in range(p - 1):
            state, r = _below(state, p - k)
            tmp = perm[k]
            perm[k] = perm[k + r]
            perm[k + r] = tmp
        best_num = np.int64(-1)
        best_den = np.int64(1)
        best_f = -1
        best_t = 0.0
        seen = 0
        for k in range(p):
            if seen >= max_features and best_f >= 0:
                break
            f = perm[k]
            seen += 1
            wl = 0
            pl = 0
            prev = -1
            for j in range(n):
                i = ranked[j, f]
                if node_of[i] != node:
                    continue
                if prev >= 0:
                    a = X[prev, f]
                    b = X[i, f]
                    wr = w_tot - wl
                    if a != b and wl >= min_leaf and wr >= min_leaf:
                        pr = w_pos - pl
                        nl = wl - pl
                        nr = wr - pr
                        # maximise (pl^2 + nl^2)/wl + (pr^2 + nr^2)/wr
                        num = (pl * pl + nl * nl) * wr + (pr * pr + nr * nr) * wl
                        den = wl * wr
                        t = 0.5 * (a + b)
                        if best_f < 0 or _better(num, den, f, t, best_num, best_den, best_f, best_t):
                            best_num, best_den, best_f, best_t = num, den, f, t
                wl += counts[i]
                pl += counts[i] * y[i]
                prev = i
        if best_f < 0:
            continue
        for i in range(n):
            if node_of[i] == node:
                node_of[i] = n_nodes if X[i, best_f] <= best_t else n_nodes + 1
        feat[node] = best_f
        thr[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = depth + 1
        stack[top + 1, 0] = n_nodes
        stack[top + 1, 1] = depth + 1
        top += 2
        n_nodes += 2
    return n_nodes


@njit(cache=True, parallel=True)
def _build(X, y, n_trees, max_features, min_leaf, max_depth, seed):
    n = X.shape[0]
    cap = 2 * n + 1
    ranked = np.empty(X.shape, dtype=np.int64)
    for f in range(X.shape[1]):
        ranked[:, f] = np.argsort(X[:, f], kind="mergesort")
    feat = np.full((n_trees, cap), LEAF, dtype=np.int64)
    thr = np.zeros((n_trees, cap))
    left = np.zeros((n_trees, cap), dtype=np.int64)
    right = np.zeros((n_trees, cap), dtype=np.int64)
    value = np.zeros((n_trees, cap))
    sizes = np.zeros(n_trees, dtype=np.int64)
    for t in prange(n_trees):
        state = tree_seed(seed, t)
        counts = np.zeros(n, dtype=np.int64)
        for _ in range(n):
            state, k = _below(state, n)
            counts[k] += 1
        sizes[t] = _grow(X, y, ranked, counts, max_features, min_leaf, max_depth, state,
                         feat[t], thr[t], left[t], right[t], value[t])
    return feat, thr, left, right, value, sizes


@njit(cache=True)
def _predict(X, feat, thr, left, right, value):
    n_trees = feat.shape[0]
    out = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            node = 0
            while feat[t, node] != LEAF:
                if X[i, feat[t, node]] <= thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += value[t, node]
        out[i] = acc / n_trees
    return out


class RandomForest(BaseEstimator, ClassifierMixin):
    """Binary random forest with reproducible, thread-count independent trees.

    ``max_features=None`` means ceil(sqrt(n_features)); ``max_depth=None``
    grows until leaves are pure or hold fewer than ``2 * min_leaf``
    bootstrap draws. With a single class in the training labels the model
    predicts that class's prevalence (0 or 1) everywhere.
    """

    def __init__(self, n_trees=400, max_features=None, min_leaf=1, max_depth=None, seed=0, n_jobs=None):
        self.n_trees = n_trees
        self.max_features = max_features
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        labels = np.unique(y)
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0/1")
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be >= 1")
        n, p = X.shape
        mf = math.ceil(math.sqrt(p)) if self.max_features is None else int(self.max_features)
        if not 1 <= mf <= p:
            raise ValueError(f"max_features must lie in [1, {p}]")
        self.n_features_in_ = p
        self.classes_ = np.array([0, 1])
        self.max_features_ = mf
        y = y.astype(np.int64)
        if len(labels) < 2 or n < 2:
            self.constant_ = float(y.mean())
            return self
        self.constant_ = None
        prev = numba.get_num_threads()
        numba.set_num_threads(min(n_threads(self.n_jobs), numba.config.NUMBA_NUM_THREADS))
        try:
            feat, thr, left, right, value, sizes = _build(
                np.ascontiguousarray(X), y, int(self.n_trees), mf, int(self.min_leaf),
                -1 if self.max_depth is None else int(self.max_depth), np.uint64(self.seed & (2**64 - 1)))
        finally:
            numba.set_num_threads(prev)
        width = int(sizes.max())
        self.trees_ = tuple(a[:, :width].copy() for a in (feat, thr, left, right, value))
        self.node_counts_ = sizes
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "constant_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if self.constant_ is not None:
            pos = np.full(len(X), self.constant_)
        else:
            pos = _predict(np.ascontiguousarray(X), *self.trees_)
        return np.column_stack([1.0 - pos, pos])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)

    def to_bytes(self) -> bytes:
        """Canonical serialisation: hyperparameters then node arrays, little-endian."""
        check_is_fitted(self, "constant_")
        head = struct.pack("<qqqqQq", self.n_trees, self.max_features_, self.min_leaf,
                           -1 if self.max_depth is None else self.max_depth,
                           self.seed & (2**64 - 1), self.n_features_in_)
        if self.constant_ is not None:
            return head + struct.pack("<d", self.constant_)
        body = b"".join(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes()
                        for a in (self.node_counts_,) + self.trees_)
        return head + body

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()
