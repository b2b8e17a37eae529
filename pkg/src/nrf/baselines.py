"""Fully connected tanh regression networks sized like the joint neural forest."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    gammas: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if not 1 <= len(self.layer_sizes) <= 3:
            raise ValueError("between one and three hidden layers")
        if min(self.layer_sizes) < 1:
            raise ValueError("hidden widths must be >= 1")
        if len(self.gammas) != len(self.layer_sizes):
            raise ValueError("one contrast per hidden layer")


@dataclass(frozen=True, eq=False)
class MlpParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    W_out: np.ndarray
    b_out: float
    gammas: tuple[float, ...]

    def arrays(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out + [self.W_out, np.asarray(self.b_out, dtype=np.float64)]

    def masks(self):
        return [None] * (2 * len(self.weights) + 2)

    def with_arrays(self, arrays):
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        L = len(self.weights)
        return replace(self, weights=tuple(arrays[0:2 * L:2]), biases=tuple(arrays[1:2 * L:2]),
                       W_out=arrays[-2], b_out=float(arrays[-1]))


def forest_layer_totals(forest) -> tuple[int, int]:
    """(total internal nodes, total leaves) over the forest's trees."""
    leaves = [t.leaf_count for t in forest.trees]
    return sum(k - 1 for k in leaves), sum(leaves)


def mlp_from_forest_shape(forest, depth_choice: int, gamma1: float = 100.0, gamma2: float = 1.0,
                          seed: int = 0) -> MlpSpec:
    """Widths of NN1/NN2/NN3 matching the big network built from ``forest``.

    NN1 uses the layer-1 width, NN2 both hidden widths, NN3 repeats the
    layer-2 width. Layer 1 uses ``gamma1``, later layers ``gamma2``.
    """
    if depth_choice not in (1, 2, 3):
        raise ValueError("depth_choice must be 1, 2 or 3")
    h1, h2 = forest_layer_totals(forest)
    sizes = (max(1, h1), h2, h2)[:depth_choice]
    gammas = (gamma1,) + (gamma2,) * (depth_choice - 1)
    return MlpSpec(sizes, tuple(float(g) for g in gammas), seed)


def init_mlp(spec: MlpSpec, n_features: int) -> MlpParams:
    """Every weight and bias drawn i.i.d. from N(0, 1) with ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    fan_in = n_features
    for width in spec.layer_sizes:
        weights.append(rng.standard_normal((fan_in, width)))
        biases.append(rng.standard_normal(width))
        fan_in = width
    W_out = rng.standard_normal(fan_in)
    b_out = float(rng.standard_normal())
    return MlpParams(tuple(weights), tuple(biases), W_out, b_out, spec.gammas)


# .npz archive: format ("nrf-mlp 1"), gammas, W0..W{L-1}, b0..b{L-1}, W_out, b_out.

def save_mlp(params: MlpParams, path) -> None:
    payload = {"format": np.array("nrf-mlp 1"), "gammas": np.array(params.gammas, dtype=np.float64),
               "W_out": params.W_out, "b_out": np.array(params.b_out)}
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"W{i}"] = W
        payload[f"b{i}"] = b
    with Path(path).open("wb") as fh:
        np.savez(fh, **payload)


def load_mlp(path) -> MlpParams:
    with np.load(path, allow_pickle=False) as z:
        if str(z["format"]) != "nrf-mlp 1":
            raise ValueError(f"{path} is not an nrf MLP file")
        gammas = tuple(float(g) for g in z["gammas"])
        L = len(gammas)
        return MlpParams(tuple(z[f"W{i}"] for i in range(L)), tuple(z[f"b{i}"] for i in range(L)),
                         z["W_out"], float(z["b_out"]), gammas)
