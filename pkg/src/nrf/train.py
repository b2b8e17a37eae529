"""Gradient training of compiled networks and the two neural-forest methods.

Training minimizes the batch-mean squared error with Adam over shuffled
minibatches, evaluates train/validation RMSE after every epoch (epoch 0 is
the untrained network) and keeps the snapshot with the lowest validation
RMSE. In sparse mode only tree-derived connections (plus all biases and the
output layer) move; in full mode every weight is trainable, with the
non-tree weights starting at zero.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, nn
from .cart import predict_tree
from .forest import ForestModel, average_rows, load_forest, predict_forest, save_forest
from .netcompile import (BigNetworkParams, NetworkParams, compile_tree, concat_networks,
                         load_network, save_network)

logger = logging.getLogger(__name__)

EVAL_CHUNK = 4096


class Mode(str, enum.Enum):
    SPARSE = "sparse"
    FULL = "full"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mode: Mode = Mode.SPARSE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not (self.learning_rate > 0 and self.eps > 0):
            raise ValueError("learning rate and eps must be positive")


def _live_entries(params, mode: Mode):
    """Position -> (rows, cols) for masked weight matrices in sparse mode."""
    if Mode(mode) is Mode.FULL:
        return None
    live = {}
    for pos, (mask, arr) in enumerate(zip(params.masks(), params.arrays())):
        if mask is not None:
            if np.any(np.asarray(arr)[~np.asarray(mask)]):
                raise ValueError("sparse mode needs zero weights outside the mask")
            live[pos] = tuple(np.ascontiguousarray(i, dtype=np.intp) for i in np.nonzero(mask))
    return live


def gradients(params, X, y, mode: Mode = Mode.SPARSE) -> list[np.ndarray]:
    """Gradient of the batch-mean squared error, shaped like ``params.arrays()``.

    Sparse mode returns exact zeros at every masked-out weight position.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("empty batch")
    _, grads = nn.mse_gradients(params.arrays(), params.gammas, X, y, live=_live_entries(params, mode))
    return grads


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return cls(np.zeros_like(theta), np.zeros_like(theta), 0)


def _bias_factors(config, t):
    """Step size ``lr / (1 - beta1^t)`` and ``1 / sqrt(1 - beta2^t)``."""
    return (config.learning_rate / (1.0 - config.beta1 ** t),
            1.0 / math.sqrt(1.0 - config.beta2 ** t))


def adam_step(state: AdamState, params, grad, config: TrainConfig = TrainConfig()):
    """One bias-corrected Adam update; returns a new ``(state, params)`` pair."""
    theta = np.array(params, dtype=np.float64, ndmin=1)
    g = np.ascontiguousarray(grad, dtype=np.float64).reshape(theta.shape)
    if state.m.shape != theta.shape or state.v.shape != theta.shape:
        raise ValueError("Adam state does not match parameter shape")
    m = np.array(state.m, dtype=np.float64, ndmin=1)
    v = np.array(state.v, dtype=np.float64, ndmin=1)
    t = state.t + 1
    step, isb2 = _bias_factors(config, t)
    flat = theta.reshape(-1)
    kernels.adam_update(flat, g.reshape(-1), m.reshape(-1), v.reshape(-1), step,
                        config.beta1, config.beta2, config.eps, isb2)
    return AdamState(m.reshape(theta.shape), v.reshape(theta.shape), t), theta


class _Layout:
    """Packs a parameter list into one contiguous vector and hands out views."""

    def __init__(self, arrays):
        self.shapes = [np.shape(a) for a in arrays]
        sizes = [int(np.prod(s, dtype=np.int64)) for s in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def pack(self, arrays) -> np.ndarray:
        if not self.size:
            return np.zeros(0)
        return np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays])

    def views(self, theta):
        return [theta[self.offsets[i]:self.offsets[i + 1]].reshape(s) for i, s in enumerate(self.shapes)]

    def live_index(self, params) -> np.ndarray:
        keep = []
        for i, mask in enumerate(params.masks()):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            if mask is None:
                keep.append(np.arange(lo, hi))
            else:
                keep.append(lo + np.flatnonzero(np.asarray(mask).reshape(-1)))
        return np.ascontiguousarray(np.concatenate(keep), dtype=np.intp)


def predict_arrays(arrays, gammas, X, live=None) -> np.ndarray:
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], EVAL_CHUNK):
        out[s:s + EVAL_CHUNK] = nn.forward(arrays, gammas, X[s:s + EVAL_CHUNK], live=live)
    return out


def rmse(pred, y) -> float:
    r = np.asarray(pred) - np.asarray(y)
    return float(np.sqrt(np.mean(r * r)))


@dataclass
class History:
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> list[int]:
        return list(range(len(self.val_rmse)))

    def best_epoch(self) -> int:
        return int(np.argmin(self.val_rmse))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_rmse", "val_rmse"])
            for e, (tr, va) in enumerate(zip(self.train_rmse, self.val_rmse)):
                w.writerow([e, repr(tr), repr(va)])

    @classmethod
    def from_csv(cls, path) -> "History":
        h = cls()
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                h.train_rmse.append(float(row["train_rmse"]))
                h.val_rmse.append(float(row["val_rmse"]))
        return h


@dataclass
class TrainResult:
    params: object
    history: History
    best_epoch: int
    # per-epoch predictions, filled only when requested
    train_preds: list[np.ndarray] | None = None
    val_preds: list[np.ndarray] | None = None

    @property
    def best_val_rmse(self) -> float:
        return self.history.val_rmse[self.best_epoch]


def train_network(params, train, val, config: TrainConfig = TrainConfig(), stream=(),
                  keep_predictions: bool = False) -> TrainResult:
    """Minibatch Adam on ``train = (X, y)``, selecting the epoch with the lowest validation RMSE.

    The shuffling generator is seeded with ``(config.seed, *stream)``.
    The last minibatch of an epoch may be smaller than ``batch_size``.
    Ties in validation RMSE keep the earliest epoch.
    """
    Xtr, ytr = (np.ascontiguousarray(a, dtype=np.float64) for a in train)
    Xva, yva = (np.ascontiguousarray(a, dtype=np.float64) for a in val)
    if ytr.size == 0 or yva.size == 0:
        raise ValueError("train and validation sets must be non-empty")
    gammas = params.gammas
    layout = _Layout(params.arrays())
    theta = layout.pack(params.arrays())
    weights = layout.views(theta)
    grad = np.zeros_like(theta)
    grad_views = layout.views(grad)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    live = _live_entries(params, config.mode)
    live_idx = layout.live_index(params) if live is not None else None
    rng = np.random.default_rng([config.seed, *stream])

    history = History()
    train_preds = [] if keep_predictions else None
    val_preds = [] if keep_predictions else None

    def evaluate():
        ptr = predict_arrays(weights, gammas, Xtr, live)
        pva = predict_arrays(weights, gammas, Xva, live)
        history.train_rmse.append(rmse(ptr, ytr))
        history.val_rmse.append(rmse(pva, yva))
        if keep_predictions:
            train_preds.append(ptr)
            val_preds.append(pva)

    evaluate()
    best_theta = theta.copy()
    best_val = history.val_rmse[0]
    best_epoch = 0
    n = ytr.shape[0]
    t = 0
    b1, b2, eps = config.beta1, config.beta2, config.eps
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            nn.mse_gradients(weights, gammas, Xtr[idx], ytr[idx], live=live, out=grad_views)
            t += 1
            step, isb2 = _bias_factors(config, t)
            if live_idx is None:
                kernels.adam_update(theta, grad, m, v, step, b1, b2, eps, isb2)
            else:
                kernels.adam_update_indexed(theta, grad, m, v, live_idx, step, b1, b2, eps, isb2)
        evaluate()
        if history.val_rmse[-1] < best_val:
            best_val = history.val_rmse[-1]
            best_theta = theta.copy()
            best_epoch = epoch
    best = params.with_arrays(layout.views(best_theta))
    return TrainResult(best, history, best_epoch, train_preds, val_preds)


class Method(str, enum.Enum):
    INDEPENDENT = "1"
    JOINT = "2"


@dataclass(eq=False)
class NrfModel:
    """A trained neural random forest.

    Method 1 keeps one network per tree and averages them; a member whose
    training never beat its own tree on validation data is replaced by that
    tree. Method 2 keeps one concatenated network. In both cases the whole
    model falls back to the forest when its validation RMSE is worse than
    the forest's.
    """

    method: Method
    mode: Mode
    forest: ForestModel
    members: list[NetworkParams] = field(default_factory=list)
    big: BigNetworkParams | None = None
    member_fallback: list[bool] = field(default_factory=list)
    fallback_to_rf: bool = False
    val_rmse: float = float("nan")
    rf_val_rmse: float = float("nan")
    history: History | None = None
    config: TrainConfig | None = None


def _member_predictions(model: NrfModel, X):
    for m, net in enumerate(model.members):
        if model.member_fallback[m]:
            yield predict_tree(model.forest.trees[m], X)
        else:
            yield predict_arrays(net.arrays(), net.gammas, X)


def predict_nrf(model: NrfModel, x):
    x = np.asarray(x, dtype=np.float64)
    X = np.ascontiguousarray(np.atleast_2d(x))
    if model.fallback_to_rf:
        out = predict_forest(model.forest, X)
    elif Method(model.method) is Method.INDEPENDENT:
        out = average_rows(_member_predictions(model, X))
    else:
        out = predict_arrays(model.big.arrays(), model.big.gammas, X)
    return float(out[0]) if x.ndim == 1 else out


def _rows(ds, idx):
    return ds.features[idx], ds.target[idx]


def fit_nrf_method1(forest: ForestModel, ds, split, gamma1: float = 100.0, gamma2: float = 1.0,
                    config: TrainConfig = TrainConfig()) -> NrfModel:
    """Train every tree network separately (same split, own shuffling stream) and average."""
    train, val = _rows(ds, split.train), _rows(ds, split.val)
    rf_val = rmse(predict_forest(forest, val[0]), val[1])
    members, flags = [], []
    M = forest.n_trees
    tr_sum = va_sum = None
    for m, tree in enumerate(forest.trees):
        net = compile_tree(tree, gamma1, gamma2)
        res = train_network(net, train, val, config, stream=(m,), keep_predictions=True)
        tree_val = rmse(predict_tree(tree, val[0]), val[1])
        flags.append(min(res.history.val_rmse) > tree_val)
        members.append(res.params)
        trp = np.stack(res.train_preds)
        vap = np.stack(res.val_preds)
        tr_sum = trp if tr_sum is None else tr_sum + trp
        va_sum = vap if va_sum is None else va_sum + vap
        logger.debug("method 1 member %d/%d: best val %.6g (tree %.6g)%s", m + 1, M,
                     res.best_val_rmse, tree_val, " -> fallback" if flags[-1] else "")
    history = History([rmse(p, train[1]) for p in tr_sum / M], [rmse(p, val[1]) for p in va_sum / M])
    model = NrfModel(Method.INDEPENDENT, config.mode, forest, members=members, member_fallback=flags,
                     rf_val_rmse=rf_val, history=history, config=config)
    val_rmse = rmse(predict_nrf(model, val[0]), val[1])
    if val_rmse > rf_val:
        model.fallback_to_rf = True
        val_rmse = rf_val
    model.val_rmse = val_rmse
    return model


def fit_nrf_method2(forest: ForestModel, ds, split, gamma1: float = 100.0, gamma2: float = 1.0,
                    config: TrainConfig = TrainConfig()) -> NrfModel:
    """Concatenate all tree networks into one and train it in a single run."""
    train, val = _rows(ds, split.train), _rows(ds, split.val)
    rf_val = rmse(predict_forest(forest, val[0]), val[1])
    big = concat_networks(compile_tree(t, gamma1, gamma2) for t in forest.trees)
    res = train_network(big, train, val, config)
    model = NrfModel(Method.JOINT, config.mode, forest, big=res.params, rf_val_rmse=rf_val,
                     history=res.history, config=config)
    # worse than the forest at every epoch -> keep the forest
    if min(res.history.val_rmse) > rf_val:
        model.fallback_to_rf = True
        model.val_rmse = rf_val
    else:
        model.val_rmse = res.best_val_rmse
    return model


def fit_nrf(forest, ds, split, method, gamma1=100.0, gamma2=1.0, config=TrainConfig()) -> NrfModel:
    method = method if isinstance(method, Method) else Method(str(method))
    fit = fit_nrf_method1 if method is Method.INDEPENDENT else fit_nrf_method2
    return fit(forest, ds, split, gamma1, gamma2, config)


def save_nrf(model: NrfModel, directory) -> Path:
    """Directory layout: ``model.json``, ``forest/``, network ``.npz`` files, ``history.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_forest(model.forest, directory / "forest")
    nets = []
    if Method(model.method) is Method.INDEPENDENT:
        for m, net in enumerate(model.members):
            name = f"member_{m:03d}.npz"
            save_network(net, directory / name)
            nets.append(name)
    else:
        save_network(model.big, directory / "big.npz")
        nets.append("big.npz")
    if model.history is not None:
        model.history.to_csv(directory / "history.csv")
    cfg = None
    if model.config is not None:
        cfg = {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in vars(model.config).items()}
    manifest = {
        "format": "nrf-model 1",
        "method": Method(model.method).value,
        "mode": Mode(model.mode).value,
        "networks": nets,
        "member_fallback": list(map(bool, model.member_fallback)),
        "fallback_to_rf": bool(model.fallback_to_rf),
        "val_rmse": model.val_rmse,
        "rf_val_rmse": model.rf_val_rmse,
        "config": cfg,
    }
    path = directory / "model.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def load_nrf(directory) -> NrfModel:
    directory = Path(directory)
    man = json.loads((directory / "model.json").read_text(encoding="utf-8"))
    if man.get("format") != "nrf-model 1":
        raise ValueError(f"{directory} does not hold an nrf model")
    forest = load_forest(directory / "forest")
    nets = [load_network(directory / f) for f in man["networks"]]
    method = Method(man["method"])
    history = History.from_csv(directory / "history.csv") if (directory / "history.csv").exists() else None
    config = TrainConfig(**man["config"]) if man.get("config") else None
    model = NrfModel(method, Mode(man["mode"]), forest, member_fallback=man["member_fallback"],
                     fallback_to_rf=man["fallback_to_rf"], val_rmse=man["val_rmse"],
                     rf_val_rmse=man["rf_val_rmse"], history=history, config=config)
    if method is Method.INDEPENDENT:
        model.members = nets
    else:
        model.big = nets[0]
    return model
