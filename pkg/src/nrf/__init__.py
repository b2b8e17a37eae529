"""Regression forests, their exact neural-network translation, and gradient refinement."""
from .cart import ExactLeaves, MaxDepth, RegressionTree, best_cut, grow_tree, predict_tree
from .data import DataError, Dataset, load_csv, split_dataset, synth_sine
from .forest import Bootstrap, ForestParams, FullSample, Subsample, fit_forest, predict_forest
from .kernels import BACKEND
from .netcompile import (BigNetworkParams, NetworkParams, check_constraint, compile_tree,
                         concat_networks, forward_hard, forward_tanh)
from .train import Method, Mode, TrainConfig, fit_nrf, predict_nrf, train_network

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BigNetworkParams", "Bootstrap", "DataError", "Dataset", "ExactLeaves",
    "ForestParams", "FullSample", "MaxDepth", "Method", "Mode", "NetworkParams",
    "RegressionTree", "Subsample", "TrainConfig", "best_cut", "check_constraint",
    "compile_tree", "concat_networks", "fit_forest", "fit_nrf", "forward_hard", "forward_tanh",
    "grow_tree", "load_csv", "predict_forest", "predict_nrf", "predict_tree", "split_dataset",
    "synth_sine", "train_network",
]
