"""Random forest over fused deep + quantization features.

Trees are grown depth-first on bootstrap weights (sample multiplicities)
rather than duplicated rows, with one RNG per tree seeded ``seed ^ t``.
Because split search only looks at boundaries between distinct values and
every random draw comes from the per-tree RNG in a fixed node order, a
forest is independent of how tree construction is scheduled.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .jpeg_meta import Q_FEATURE_LENGTH, QFeature


class DegenerateDataWarning(UserWarning):
    pass


class RaggedFeatures(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    deep: tuple[float, ...]
    quant: tuple[int, ...]

    def __post_init__(self):
        if len(self.deep) < 2:
            raise ValueError("deep features need at least two entries")
        if len(self.quant) != Q_FEATURE_LENGTH:
            raise ValueError(f"quant part must have {Q_FEATURE_LENGTH} entries")

    @property
    def fused(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.deep, dtype=np.float64),
                               np.asarray(self.quant, dtype=np.float64)])

    def __len__(self):
        return len(self.deep) + len(self.quant)


def fuse(deep, q) -> FeatureVector:
    """Concatenate deep features and the Q vector, deep first, no scaling."""
    quant = q.coefficients if isinstance(q, QFeature) else tuple(int(v) for v in q)
    return FeatureVector(tuple(float(v) for v in np.asarray(deep).ravel()), tuple(quant))


def fuse_batch(deep, q) -> np.ndarray:
    """Row-wise fusion of (N, K) deep features with (N, 9) Q coefficients."""
    deep = np.asarray(deep, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if deep.ndim != 2 or q.shape != (deep.shape[0], Q_FEATURE_LENGTH):
        raise RaggedFeatures(f"cannot fuse deep {deep.shape} with quant {q.shape}")
    return np.concatenate([deep, q], axis=1)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_features: int | str = "sqrt"
    min_samples_leaf: int = 1
    max_depth: int | None = None
    bootstrap: bool = True
    extra_trees: bool = False
    seed: int = 0

    def resolve_max_features(self, d: int) -> int:
        if self.max_features == "sqrt":
            return max(1, math.ceil(math.sqrt(d)))
        if self.max_features in (None, "all"):
            return d
        return max(1, min(d, int(self.max_features)))

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Tree:
    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # float64, go left when x <= threshold
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    value: np.ndarray      # (nodes, classes) weighted class histogram

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            f = self.feature[nd]
            go_left = X[r, f] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_class(self, X) -> np.ndarray:
        # argmax keeps the lowest class index on ties
        return self.value[self.apply(X)].argmax(axis=1)


def _split_candidates(vals, y, w, n_classes, min_leaf, extra, rng):
    """Return (score, threshold) of the best split on one feature, or None."""
    if extra:
        lo, hi = vals.min(), vals.max()
        if not hi > lo:
            return None
        thr = rng.uniform(lo, hi)
        left = vals <= thr
        wl = w[left].sum()
        wr = w[~left].sum()
        if wl < min_leaf or wr < min_leaf or wl == 0 or wr == 0:
            return None
        hl = np.bincount(y[left], w[left], minlength=n_classes)
        hr = np.bincount(y[~left], w[~left], minlength=n_classes)
        score = ((wl - (hl @ hl) / wl) + (wr - (hr @ hr) / wr)) / (wl + wr)
        return float(score), float(thr)
    order = np.argsort(vals, kind="stable")
    sv = np.ascontiguousarray(vals[order])
    score, i = kernels.best_gini_split(sv, np.ascontiguousarray(y[order]),
                                       np.ascontiguousarray(w[order]), n_classes,
                                       float(min_leaf))
    if i < 0:
        return None
    thr = 0.5 * (sv[i] + sv[i + 1])
    if not sv[i] <= thr < sv[i + 1]:
        thr = sv[i]
    return float(score), float(thr)


def grow_tree(X, y, weights, n_classes, params: ForestParams, rng) -> Tree:
    """Grow one tree depth-first (left child before right)."""
    n, d = X.shape
    mtry = params.resolve_max_features(d)
    max_depth = params.max_depth if params.max_depth is not None else np.inf
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(hist):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(hist)
        return len(feature) - 1

    root_idx = np.flatnonzero(weights > 0)
    stack = [(root_idx, 0, None, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        yi, wi = y[idx], weights[idx]
        hist = np.bincount(yi, wi, minlength=n_classes)
        node = new_node(hist)
        if parent is not None:
            (right if is_right else left)[parent] = node
        total = hist.sum()
        if depth >= max_depth or np.count_nonzero(hist) <= 1 or total < 2 * params.min_samples_leaf:
            continue
        best = None
        order = rng.permutation(d)
        for k, f in enumerate(order):
            if k >= mtry and best is not None:
                break
            cand = _split_candidates(X[idx, f], yi, wi, n_classes, params.min_samples_leaf,
                                     params.extra_trees, rng)
            if cand is not None and (best is None or cand[0] < best[0]):
                best = (cand[0], cand[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        feature[node], threshold[node] = f, thr
        go_left = X[idx, f] <= thr
        # pushed right first so the left subtree is grown (and numbered) first
        stack.append((idx[~go_left], depth + 1, node, True))
        stack.append((idx[go_left], depth + 1, node, False))
    return Tree(np.array(feature, dtype=np.int32), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
                np.array(value, dtype=np.float64).reshape(-1, n_classes))


def tree_rng(seed: int, tree_index: int):
    return np.random.default_rng(seed ^ tree_index)


def bootstrap_weights(rng, n: int) -> np.ndarray:
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)


def _grow_one(X, y, n_classes, params, t):
    rng = tree_rng(params.seed, t)
    if params.bootstrap and not params.extra_trees:
        w = bootstrap_weights(rng, len(y))
    else:
        w = np.ones(len(y))
    return grow_tree(X, y, w, n_classes, params, rng)


@dataclass
class ForestModel:
    trees: list[Tree]
    n_classes: int
    n_features: int
    params: ForestParams = field(default_factory=ForestParams)

    def votes(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise LengthMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            out[rows, tree.predict_class(X)] += 1
        return out

    def predict_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        v = self.votes(X)
        return v.argmax(axis=1), v

    def predict(self, fv) -> tuple[int, np.ndarray]:
        """Majority vote for one feature vector; ties go to the lowest class."""
        x = fv.fused if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=np.float64)
        if x.ndim != 1:
            raise LengthMismatch("predict takes a single feature vector")
        v = self.votes(x[None])[0]
        return int(v.argmax()), v


def train_forest(samples, labels, params: ForestParams = ForestParams(), n_classes=None,
                 n_jobs: int = 1) -> ForestModel:
    if isinstance(samples, np.ndarray):
        X = np.asarray(samples, dtype=np.float64)
        if X.ndim != 2:
            raise RaggedFeatures("samples must form a 2-D array")
    else:
        rows = [s.fused if isinstance(s, FeatureVector) else np.asarray(s, dtype=np.float64)
                for s in samples]
        if len({len(r) for r in rows}) > 1:
            raise RaggedFeatures("feature vectors differ in length")
        X = np.array(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("need one label per sample and at least one sample")
    if y.min() < 0:
        raise ValueError("labels must be non-negative class indices")
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)
    if len(np.unique(y)) < 2:
        warnings.warn("training data has a single class; the forest is a constant classifier",
                      DegenerateDataWarning, stacklevel=2)
    jobs = range(params.n_trees)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(lambda t: _grow_one(X, y, n_classes, params, t), jobs))
    else:
        trees = [_grow_one(X, y, n_classes, params, t) for t in jobs]
    return ForestModel(trees, n_classes, X.shape[1], params)
