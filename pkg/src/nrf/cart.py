"""CART regression trees grown with the empirical-variance split criterion.

Splits send ``x[j] < alpha`` left and ``x[j] >= alpha`` right. Thresholds
sit halfway between two consecutive distinct sample values of the node.
Node arrays are stored in pre-order (root first, left subtree before right).
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .data import Dataset

# Gains closer than this (relative to the node variance) count as ties.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float


@dataclass(frozen=True)
class MaxDepth:
    depth: int


@dataclass(frozen=True)
class ExactLeaves:
    leaves: int


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Arena of nodes in pre-order; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    depth: np.ndarray
    gain: np.ndarray
    n_features: int

    def __post_init__(self):
        for name in ("feature", "left", "right", "count", "depth"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.intp))
        for name in ("threshold", "value", "gain"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def leaves(self) -> np.ndarray:
        """Leaf node ids in pre-order."""
        return np.flatnonzero(self.is_leaf)

    @property
    def internal(self) -> np.ndarray:
        """Internal node ids in pre-order."""
        return np.flatnonzero(~self.is_leaf)

    @property
    def leaf_count(self) -> int:
        return int(self.is_leaf.sum())

    @property
    def max_depth(self) -> int:
        return int(self.depth[self.is_leaf].max())

    def __eq__(self, other):
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return self.n_features == other.n_features and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("feature", "threshold", "left", "right", "value", "count", "depth", "gain"))


def _xy(ds):
    if isinstance(ds, Dataset):
        return ds.features, ds.target
    X, y = ds
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


def _mean(y):
    # 0/0 = 0 for an empty cell
    return float(y.mean()) if y.size else 0.0


def criterion(node_samples, j: int, alpha: float, ds) -> float:
    """Decrease in within-node mean squared deviation from cutting feature ``j`` at ``alpha``.

    Evaluated directly: node variance minus the mean squared residual after
    replacing each target by its side's mean.
    """
    X, y = _xy(ds)
    idx = np.asarray(node_samples)
    if idx.size == 0:
        raise ValueError("node has no samples")
    x = X[idx, j]
    yy = y[idx]
    if not (x.min() < alpha <= x.max()):
        raise ValueError(f"threshold {alpha} does not cut feature {j} of this node in two")
    right = x >= alpha
    before = np.mean((yy - yy.mean()) ** 2)
    fitted = np.where(right, _mean(yy[right]), _mean(yy[~right]))
    after = np.mean((yy - fitted) ** 2)
    return float(before - after)


def _midpoint(lo: float, hi: float) -> float:
    alpha = lo + (hi - lo) / 2.0
    # adjacent floats: the midpoint can round onto lo, which would send lo right
    return alpha if alpha > lo else hi


def best_cut(node_samples, feature_subset, ds) -> Split | None:
    """Best midpoint cut over the allowed features, or None when no cut reduces variance.

    Ties (within ``TIE_RTOL`` of the node variance) go to the lowest feature
    index, then the lowest threshold.
    """
    X, y = _xy(ds)
    idx = np.asarray(node_samples)
    features = sorted(int(j) for j in feature_subset)
    if not features:
        raise ValueError("feature_subset must be non-empty")
    return _best_cut(X[idx], y[idx], features)


def _best_cut(Xn: np.ndarray, yn: np.ndarray, features) -> Split | None:
    n = yn.shape[0]
    if n < 2 or yn.min() == yn.max():
        return None
    yc = yn - yn.mean()
    tol = TIE_RTOL * float(np.mean(yc * yc))
    scans = []
    for j in features:
        order = np.argsort(Xn[:, j], kind="stable")
        xs = np.ascontiguousarray(Xn[order, j])
        gains = kernels.split_gains(xs, np.ascontiguousarray(yc[order]))
        scans.append((j, xs, gains))
    top = max(float(g.max()) for _, _, g in scans)
    if not top > tol:
        return None
    for j, xs, gains in scans:
        hits = np.flatnonzero(gains >= top - tol)
        if hits.size:
            i = int(hits[0])
            return Split(j, _midpoint(float(xs[i - 1]), float(xs[i])), float(gains[i]))
    raise AssertionError("unreachable: the maximum belongs to some feature")


class _Node:
    __slots__ = ("idx", "depth", "split", "left", "right", "uid")

    def __init__(self, idx, depth, uid):
        self.idx = idx
        self.depth = depth
        self.split = None
        self.left = None
        self.right = None
        self.uid = uid


class _FeatureSampler:
    def __init__(self, d: int, mtry: int | None, rng):
        self.d = d
        self.mtry = d if mtry is None else int(mtry)
        if not 1 <= self.mtry <= d:
            raise ValueError(f"mtry must be in [1, {d}], got {mtry}")
        self.rng = rng

    def draw(self):
        if self.mtry == self.d:
            return range(self.d)
        return sorted(int(j) for j in self.rng.choice(self.d, size=self.mtry, replace=False))


def grow_tree(train_indices, ds, stop, mtry: int | None = None, seed=None, rng=None) -> RegressionTree:
    """Grow a CART tree on the rows ``train_indices`` of ``ds``.

    ``stop`` is ``MaxDepth(D)`` (depth-first; split every node shallower
    than D that has a positive-gain cut) or ``ExactLeaves(K)`` (best-first;
    split the frontier leaf with the largest gain until K leaves or no cut
    is left). Each node looks only at ``mtry`` features drawn without
    replacement; the default uses all of them. Repeated indices (bootstrap)
    count with multiplicity.
    """
    X, y = _xy(ds)
    idx = np.asarray(train_indices, dtype=np.intp)
    if idx.size < 1:
        raise ValueError("need at least one training index")
    rng = rng if rng is not None else np.random.default_rng(seed)
    sampler = _FeatureSampler(X.shape[1], mtry, rng)

    uid = 0

    def make(node_idx, depth):
        nonlocal uid
        node = _Node(node_idx, depth, uid)
        uid += 1
        return node

    def evaluate(node):
        features = sampler.draw()
        return _best_cut(X[node.idx], y[node.idx], features)

    def apply_split(node, split):
        node.split = split
        right = X[node.idx, split.feature] >= split.threshold
        node.left = make(node.idx[~right], node.depth + 1)
        node.right = make(node.idx[right], node.depth + 1)

    root = make(idx, 0)
    if isinstance(stop, MaxDepth):
        stack = [root]
        while stack:
            node = stack.pop()
            if node.depth >= stop.depth:
                continue
            split = evaluate(node)
            if split is None:
                continue
            apply_split(node, split)
            stack.append(node.right)
            stack.append(node.left)
    elif isinstance(stop, ExactLeaves):
        if stop.leaves < 1:
            raise ValueError("ExactLeaves needs K >= 1")
        frontier = []

        def push(node):
            split = evaluate(node)
            if split is not None:
                heapq.heappush(frontier, (-split.gain, node.uid, node, split))

        push(root)
        leaves = 1
        while leaves < stop.leaves and frontier:
            _, _, node, split = heapq.heappop(frontier)
            apply_split(node, split)
            leaves += 1
            push(node.left)
            push(node.right)
    else:
        raise TypeError(f"unknown stopping rule {stop!r}")

    return _freeze(root, X.shape[1], y)


def _freeze(root, d, y) -> RegressionTree:
    order = []
    stack = [root]
    while stack:
        node = stack.pop()
        order.append(node)
        if node.split is not None:
            stack.append(node.right)
            stack.append(node.left)
    pos = {node.uid: i for i, node in enumerate(order)}
    n = len(order)
    feature = np.full(n, -1, dtype=np.intp)
    left = np.full(n, -1, dtype=np.intp)
    right = np.full(n, -1, dtype=np.intp)
    threshold = np.zeros(n)
    gain = np.zeros(n)
    value = np.array([_mean(y[node.idx]) for node in order])
    count = np.array([node.idx.size for node in order], dtype=np.intp)
    depth = np.array([node.depth for node in order], dtype=np.intp)
    for i, node in enumerate(order):
        if node.split is not None:
            feature[i] = node.split.feature
            threshold[i] = node.split.threshold
            gain[i] = node.split.gain
            left[i] = pos[node.left.uid]
            right[i] = pos[node.right.uid]
    return RegressionTree(feature, threshold, left, right, value, count, depth, gain, d)


def apply(tree: RegressionTree, X) -> np.ndarray:
    """Leaf node id for each row of ``X``."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] != tree.n_features:
        raise ValueError(f"expected {tree.n_features} features, got {X.shape[1]}")
    return kernels.route(X, tree.feature, tree.threshold, tree.left, tree.right)


def predict_tree(tree: RegressionTree, x):
    """Leaf mean for a point (scalar result) or for each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    out = tree.value[apply(tree, x)]
    return float(out[0]) if x.ndim == 1 else out


# Text format, one node per line after a three-line header:
#   nrf-tree 1
#   n_features <d>
#   n_nodes <N>
#   <id> split <feature> <threshold> <left> <right> <count> <depth> <gain> <mean>
#   <id> leaf <mean> <count> <depth>
# Floats are written with repr() and read back exactly.

def dumps_tree(tree: RegressionTree) -> str:
    lines = ["nrf-tree 1", f"n_features {tree.n_features}", f"n_nodes {tree.n_nodes}"]
    for i in range(tree.n_nodes):
        if tree.feature[i] < 0:
            lines.append(f"{i} leaf {float(tree.value[i])!r} {tree.count[i]} {tree.depth[i]}")
        else:
            lines.append(
                f"{i} split {tree.feature[i]} {float(tree.threshold[i])!r} {tree.left[i]} "
                f"{tree.right[i]} {tree.count[i]} {tree.depth[i]} {float(tree.gain[i])!r} "
                f"{float(tree.value[i])!r}")
    return "\n".join(lines) + "\n"


def loads_tree(text: str) -> RegressionTree:
    lines = [ln.split() for ln in text.strip().splitlines()]
    if lines[0] != ["nrf-tree", "1"]:
        raise ValueError("not an nrf-tree v1 document")
    d = int(lines[1][1])
    n = int(lines[2][1])
    body = lines[3:]
    if len(body) != n:
        raise ValueError(f"expected {n} node lines, found {len(body)}")
    cols = {k: [0] * n for k in ("feature", "threshold", "left", "right", "value", "count", "depth", "gain")}
    for parts in body:
        i = int(parts[0])
        if parts[1] == "leaf":
            cols["feature"][i], cols["left"][i], cols["right"][i] = -1, -1, -1
            cols["threshold"][i], cols["gain"][i] = 0.0, 0.0
            cols["value"][i] = float(parts[2])
            cols["count"][i], cols["depth"][i] = int(parts[3]), int(parts[4])
        elif parts[1] == "split":
            cols["feature"][i] = int(parts[2])
            cols["threshold"][i] = float(parts[3])
            cols["left"][i], cols["right"][i] = int(parts[4]), int(parts[5])
            cols["count"][i], cols["depth"][i] = int(parts[6]), int(parts[7])
            cols["gain"][i], cols["value"][i] = float(parts[8]), float(parts[9])
        else:
            raise ValueError(f"bad node kind {parts[1]!r}")
    return RegressionTree(n_features=d, **{k: np.array(v) for k, v in cols.items()})


def save_tree(tree: RegressionTree, path) -> None:
    Path(path).write_text(dumps_tree(tree), encoding="utf-8")


def load_tree(path) -> RegressionTree:
    return loads_tree(Path(path).read_text(encoding="utf-8"))
