"""Random forests of CART trees with per-tree resampling and per-node mtry."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cart import (ExactLeaves, MaxDepth, RegressionTree, grow_tree, load_tree,
                   predict_tree, save_tree)
from .data import Dataset


@dataclass(frozen=True)
class Bootstrap:
    """Draw as many rows as the training set holds, with replacement."""


@dataclass(frozen=True)
class Subsample:
    """Draw ``size`` distinct rows; ``None`` means ceil(0.632 n)."""

    size: int | None = None

    def resolve(self, n: int) -> int:
        a = math.ceil(0.632 * n) if self.size is None else int(self.size)
        if not 2 <= a <= n:
            raise ValueError(f"subsample size must be in [2, {n}], got {a}")
        return a


@dataclass(frozen=True)
class FullSample:
    """Every tree sees the whole training set once (no resampling)."""


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 30
    resample: Bootstrap | Subsample | FullSample = field(default_factory=Bootstrap)
    mtry: int | None = None
    stop: MaxDepth | ExactLeaves = field(default_factory=lambda: MaxDepth(6))
    seed: int = 0

    def resolved_mtry(self, d: int) -> int:
        mtry = max(1, d // 3) if self.mtry is None else int(self.mtry)
        if not 1 <= mtry <= d:
            raise ValueError(f"mtry must be in [1, {d}], got {mtry}")
        return mtry


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[RegressionTree, ...]
    params: ForestParams
    resamples: tuple[np.ndarray, ...]
    n_features: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def draw_resample(train_indices: np.ndarray, resample, rng) -> np.ndarray:
    n = train_indices.shape[0]
    if isinstance(resample, Bootstrap):
        return train_indices[rng.integers(0, n, size=n)]
    if isinstance(resample, Subsample):
        return train_indices[rng.choice(n, size=resample.resolve(n), replace=False)]
    if isinstance(resample, FullSample):
        return train_indices.copy()
    raise TypeError(f"unknown resampling mode {resample!r}")


def _grow_member(args):
    X, y, train_indices, params, mtry, m = args
    rng = np.random.default_rng([params.seed, m])
    rows = draw_resample(train_indices, params.resample, rng)
    return grow_tree(rows, (X, y), params.stop, mtry=mtry, rng=rng), rows


def fit_forest(ds: Dataset, train_indices, params: ForestParams = ForestParams(),
               n_jobs: int = 1) -> ForestModel:
    """Grow ``params.n_trees`` trees, tree ``m`` driven by the generator seeded with ``(seed, m)``.

    With ``n_jobs > 1`` trees are grown in worker processes; the result is
    identical to the serial run because every tree owns its random stream.
    """
    train_indices = np.asarray(train_indices, dtype=np.intp)
    if train_indices.size < 2:
        raise ValueError("need at least two training rows")
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    mtry = params.resolved_mtry(ds.d)
    jobs = [(ds.features, ds.target, train_indices, params, mtry, m) for m in range(params.n_trees)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            grown = list(pool.map(_grow_member, jobs))
    else:
        grown = [_grow_member(job) for job in jobs]
    return ForestModel(tuple(t for t, _ in grown), params, tuple(r for _, r in grown), ds.d)


def average_rows(preds) -> np.ndarray:
    """Mean of equally shaped prediction arrays, summed in index order."""
    acc = None
    count = 0
    for p in preds:
        acc = np.array(p, dtype=np.float64) if acc is None else acc + p
        count += 1
    return acc / count


def predict_forest(model: ForestModel, x):
    """Average of the member trees' predictions (scalar for one point)."""
    x = np.asarray(x, dtype=np.float64)
    out = average_rows(predict_tree(t, np.atleast_2d(x)) for t in model.trees)
    return float(out[0]) if x.ndim == 1 else out


def _params_to_dict(p: ForestParams) -> dict:
    if isinstance(p.resample, Subsample):
        resample = {"kind": "subsample", "size": p.resample.size}
    else:
        resample = {"kind": "bootstrap" if isinstance(p.resample, Bootstrap) else "full"}
    if isinstance(p.stop, MaxDepth):
        stop = {"kind": "max_depth", "value": p.stop.depth}
    else:
        stop = {"kind": "exact_leaves", "value": p.stop.leaves}
    return {"n_trees": p.n_trees, "resample": resample, "mtry": p.mtry, "stop": stop, "seed": p.seed}


def _params_from_dict(d: dict) -> ForestParams:
    r = d["resample"]
    resample = {"bootstrap": Bootstrap(), "full": FullSample()}.get(r["kind"]) or Subsample(r.get("size"))
    s = d["stop"]
    stop = MaxDepth(s["value"]) if s["kind"] == "max_depth" else ExactLeaves(s["value"])
    return ForestParams(d["n_trees"], resample, d["mtry"], stop, d["seed"])


def save_forest(model: ForestModel, directory) -> Path:
    """Write ``forest.json`` plus one text file per tree into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for m, tree in enumerate(model.trees):
        name = f"tree_{m:03d}.txt"
        save_tree(tree, directory / name)
        files.append(name)
    manifest = {
        "format": "nrf-forest 1",
        "n_features": model.n_features,
        "params": _params_to_dict(model.params),
        "trees": files,
        "resamples": [r.tolist() for r in model.resamples],
    }
    path = directory / "forest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def load_forest(directory) -> ForestModel:
    directory = Path(directory)
    manifest = json.loads((directory / "forest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != "nrf-forest 1":
        raise ValueError(f"{directory} does not hold an nrf forest")
    trees = tuple(load_tree(directory / f) for f in manifest["trees"])
    resamples = tuple(np.array(r, dtype=np.intp) for r in manifest["resamples"])
    return ForestModel(trees, _params_from_dict(manifest["params"]), resamples, manifest["n_features"])
