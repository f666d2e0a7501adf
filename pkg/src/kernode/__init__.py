"""Learned node kernels: hop-weighted feature smoothing, base kernels and triplet training."""

from .data import GraphDataset, SplitSpec, load_dataset, make_split, save_dataset
from .kernels import BaseKernel, gram_matrix
from .model import FeatureMapConfig, GCNMap, GThetaMap, build_feature_map, build_hop_operators
from .training import TrainConfig, TrainResult, train, train_linkpred

__version__ = "0.1.0"

__all__ = [
    "BaseKernel",
    "FeatureMapConfig",
    "GCNMap",
    "GThetaMap",
    "GraphDataset",
    "SplitSpec",
    "TrainConfig",
    "TrainResult",
    "build_feature_map",
    "build_hop_operators",
    "gram_matrix",
    "load_dataset",
    "make_split",
    "save_dataset",
    "train",
    "train_linkpred",
]
