"""Decentralized recursive least-squares with data-adaptive censoring."""

from .algorithms import AlgorithmKind, World, run
from .config import RunConfig, load_config
from .graph import Network, from_edges, is_connected, laplacian_max_eigenvalue, random_geometric
from .metrics import MetricsLog, msd, smrd

__all__ = [
    "AlgorithmKind",
    "MetricsLog",
    "Network",
    "RunConfig",
    "World",
    "from_edges",
    "is_connected",
    "laplacian_max_eigenvalue",
    "load_config",
    "msd",
    "random_geometric",
    "run",
    "smrd",
]

__version__ = "0.1.0"
