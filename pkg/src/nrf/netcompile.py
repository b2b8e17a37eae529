"""Exact translation of regression trees into two-hidden-layer networks.

Layer 1 has one neuron per internal node (pre-order) testing
``x[j] - alpha``; layer 2 has one neuron per leaf (pre-order) that fires
when every split on the leaf's path agrees; the output layer recovers the
leaf mean. With the hard threshold ``tau(u) = 2*[u >= 0] - 1`` the network
reproduces the tree exactly; with ``tanh(gamma * u)`` it is a smooth
relaxation that can be trained by gradient descent.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .cart import RegressionTree


@dataclass(frozen=True, eq=False)
class NetworkParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_out: np.ndarray
    b_out: float
    mask1: np.ndarray
    mask2: np.ndarray
    gamma1: float = 100.0
    gamma2: float = 1.0
    C_bound: float = 1.5

    @property
    def n_features(self) -> int:
        return self.W1.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def n_leaves(self) -> int:
        return self.W2.shape[1]

    @property
    def gammas(self) -> tuple[float, float]:
        return (self.gamma1, self.gamma2)

    @property
    def leaf_budget(self) -> int:
        """Leaf count K in the constraint bound C * K."""
        return self.n_leaves

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2, self.W_out, np.asarray(self.b_out, dtype=np.float64)]

    def masks(self) -> list[np.ndarray | None]:
        return [self.mask1, None, self.mask2, None, None, None]

    def with_arrays(self, arrays):
        W1, b1, W2, b2, W_out, b_out = (np.array(a, dtype=np.float64) for a in arrays)
        return replace(self, W1=W1, b1=b1, W2=W2, b2=b2, W_out=W_out, b_out=float(b_out))


@dataclass(frozen=True, eq=False)
class BigNetworkParams(NetworkParams):
    """Concatenation of per-tree networks with a shared output neuron.

    ``blocks[m]`` is ``(hidden_start, hidden_stop, leaf_start, leaf_stop)``
    for tree ``m``; outside the blocks ``W2`` is structurally zero.
    """

    blocks: tuple[tuple[int, int, int, int], ...] = field(default_factory=tuple)

    @property
    def n_trees(self) -> int:
        return len(self.blocks)

    @property
    def leaf_budget(self) -> int:
        return max(l1 - l0 for _, _, l0, l1 in self.blocks)


def _paths(tree: RegressionTree):
    """For each leaf in pre-order, the (internal node, went_right) pairs on its root path."""
    paths = {}
    stack = [(0, ())]
    while stack:
        node, path = stack.pop()
        if tree.feature[node] < 0:
            paths[node] = path
        else:
            stack.append((tree.right[node], path + ((node, True),)))
            stack.append((tree.left[node], path + ((node, False),)))
    return [paths[leaf] for leaf in tree.leaves]


def compile_tree(tree: RegressionTree, gamma1: float = 100.0, gamma2: float = 1.0) -> NetworkParams:
    """Network whose hard-threshold evaluation equals ``predict_tree(tree, .)``.

    A single-leaf tree compiles to a constant network: no layer-1 neurons and
    one always-on layer-2 neuron (offset 1/2).
    """
    internal = tree.internal
    leaves = tree.leaves
    d = tree.n_features
    K = leaves.size
    hidden_of = {int(node): k for k, node in enumerate(internal)}

    W1 = np.zeros((d, K - 1))
    W1[tree.feature[internal], np.arange(K - 1)] = 1.0
    b1 = -tree.threshold[internal].astype(np.float64)

    W2 = np.zeros((K - 1, K))
    b2 = np.zeros(K)
    for col, path in enumerate(_paths(tree)):
        for node, went_right in path:
            W2[hidden_of[node], col] = 1.0 if went_right else -1.0
        b2[col] = -len(path) + 0.5

    means = tree.value[leaves].astype(np.float64)
    W_out = means / 2.0
    b_out = float(np.sum(means)) / 2.0
    C = 1.5 + (float(np.abs(means).max()) if K else 0.0)
    return NetworkParams(W1, b1, W2, b2, W_out, b_out, W1 != 0, W2 != 0,
                         float(gamma1), float(gamma2), C)


def compile_forest(forest, gamma1: float = 100.0, gamma2: float = 1.0) -> list[NetworkParams]:
    return [compile_tree(t, gamma1, gamma2) for t in forest.trees]


def tau(u):
    return np.where(u >= 0, 1.0, -1.0)


def hard_activations(params: NetworkParams, X):
    """Pre-activations and threshold outputs of both hidden layers: (u1, v1, u2, v2)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    u1 = X @ params.W1 + params.b1
    v1 = tau(u1)
    u2 = v1 @ params.W2 + params.b2
    return u1, v1, u2, tau(u2)


def forward_hard(params: NetworkParams, x):
    """Threshold-activation output ``W_out . tau(W2' tau(W1' x + b1) + b2) + b_out``.

    The output layer is evaluated as ``W_out . (v + 1) + (b_out - sum(W_out))``,
    which is the same affine map; for a compiled tree the first term is
    exactly the leaf mean and the second exactly zero, so the network
    reproduces the tree bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    _, _, _, v2 = hard_activations(params, x)
    out = (v2 + 1.0) @ params.W_out + (params.b_out - float(np.sum(params.W_out)))
    return float(out[0]) if x.ndim == 1 else out


def forward_tanh(params: NetworkParams, x, keep: bool = False):
    """Smooth output with ``tanh(gamma1 u)`` in layer 1 and ``tanh(gamma2 u)`` in layer 2.

    With ``keep`` returns ``(output, activations, pre_activations)`` for
    back-propagation, where ``activations[0]`` is the input batch.
    """
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    res = nn.forward(params.arrays(), params.gammas, X, keep=keep)
    if keep:
        return res
    return float(res[0]) if x.ndim == 1 else res


def concat_networks(nets) -> BigNetworkParams:
    """Block-diagonal "big" network whose output is the average of the inputs' outputs."""
    nets = list(nets)
    if not nets:
        raise ValueError("need at least one network")
    d = nets[0].n_features
    g = nets[0].gammas
    for net in nets:
        if net.n_features != d:
            raise ValueError("networks disagree on input dimension")
        if net.gammas != g:
            raise ValueError("networks disagree on contrasts")
    M = len(nets)
    H = sum(n.n_hidden for n in nets)
    K = sum(n.n_leaves for n in nets)
    W2 = np.zeros((H, K))
    mask2 = np.zeros((H, K), dtype=bool)
    blocks = []
    h0 = l0 = 0
    for net in nets:
        h1, l1 = h0 + net.n_hidden, l0 + net.n_leaves
        W2[h0:h1, l0:l1] = net.W2
        mask2[h0:h1, l0:l1] = net.mask2
        blocks.append((h0, h1, l0, l1))
        h0, l0 = h1, l1
    W1 = np.concatenate([n.W1 for n in nets], axis=1)
    mask1 = np.concatenate([n.mask1 for n in nets], axis=1)
    b1 = np.concatenate([n.b1 for n in nets])
    b2 = np.concatenate([n.b2 for n in nets])
    W_out = np.concatenate([n.W_out / M for n in nets])
    b_out = sum(n.b_out for n in nets) / M
    C = max(n.C_bound for n in nets)
    return BigNetworkParams(W1, b1, W2, b2, W_out, b_out, mask1, mask2, g[0], g[1], C,
                            blocks=tuple(blocks))


@dataclass(frozen=True)
class ConstraintReport:
    value: float
    bound: float
    margin: float
    passed: bool


def check_constraint(params: NetworkParams, C: float | None = None) -> ConstraintReport:
    """Compare ``max|W2| + max|b2| + sum|W_out| + |b_out|`` with ``C * K``.

    K is the leaf count (largest per-tree leaf count for a big network);
    ``C`` defaults to the network's ``C_bound``. Diagnostic only.
    """
    C = params.C_bound if C is None else float(C)

    def sup(a):
        return float(np.abs(a).max()) if a.size else 0.0

    value = sup(params.W2) + sup(params.b2) + float(np.abs(params.W_out).sum()) + abs(params.b_out)
    bound = C * params.leaf_budget
    return ConstraintReport(value, bound, bound - value, value <= bound)


# Weight files are numpy .npz archives with the keys
#   format ("nrf-net 1"), kind ("tree" | "big"), W1, b1, W2, b2, W_out,
#   b_out (0-d), mask1, mask2, gamma1, gamma2, C_bound and, for big
#   networks, blocks (M x 4 int array). Arrays round-trip bit-exactly.

def save_network(params: NetworkParams, path) -> None:
    payload = dict(
        format=np.array("nrf-net 1"),
        kind=np.array("big" if isinstance(params, BigNetworkParams) else "tree"),
        W1=params.W1, b1=params.b1, W2=params.W2, b2=params.b2, W_out=params.W_out,
        b_out=np.array(params.b_out), mask1=params.mask1, mask2=params.mask2,
        gamma1=np.array(params.gamma1), gamma2=np.array(params.gamma2),
        C_bound=np.array(params.C_bound))
    if isinstance(params, BigNetworkParams):
        payload["blocks"] = np.array(params.blocks, dtype=np.int64).reshape(-1, 4)
    with Path(path).open("wb") as fh:
        np.savez(fh, **payload)


def load_network(path) -> NetworkParams:
    with np.load(path, allow_pickle=False) as z:
        if str(z["format"]) != "nrf-net 1":
            raise ValueError(f"{path} is not an nrf network file")
        common = dict(W1=z["W1"], b1=z["b1"], W2=z["W2"], b2=z["b2"], W_out=z["W_out"],
                      b_out=float(z["b_out"]), mask1=z["mask1"], mask2=z["mask2"],
                      gamma1=float(z["gamma1"]), gamma2=float(z["gamma2"]),
                      C_bound=float(z["C_bound"]))
        if str(z["kind"]) == "big":
            blocks = tuple(tuple(int(v) for v in row) for row in z["blocks"])
            return BigNetworkParams(**common, blocks=blocks)
        return NetworkParams(**common)
