"""Pruning mixture-of-experts motion networks: training, sparsity, and motion quality."""
from .kernels import BACKEND
from .network import MoENetwork, NetworkConfig, init_network
from .pruning import PruneConfig, PruneState, compute_masks, sparsity_at
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "MoENetwork", "NetworkConfig", "init_network", "PruneConfig", "PruneState",
    "compute_masks", "sparsity_at", "TrainConfig", "train",
]
