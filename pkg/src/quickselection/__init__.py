"""Unsupervised feature selection with a truly sparse denoising autoencoder."""
from __future__ import annotations

from .dae import Hyperparams, NonFiniteLossError, SparseDae, SparseLayer, TrainReport, train
from .data import Dataset, DataError, SyntheticSpec, generate_madelon_like, load_csv
from .evolution import EvolutionLog, evolve
from .selection import FeatureRanking, neuron_strength, rank_all, select_top_k
from .sparse_matrix import SparseWeights, erdos_renyi_init

__all__ = [
    "DataError", "Dataset", "EvolutionLog", "FeatureRanking", "Hyperparams",
    "NonFiniteLossError", "SparseDae", "SparseLayer", "SparseWeights", "SyntheticSpec",
    "TrainReport", "erdos_renyi_init", "evolve", "generate_madelon_like", "load_csv",
    "neuron_strength", "rank_all", "select_top_k", "train",
]
__version__ = "0.1.0"
