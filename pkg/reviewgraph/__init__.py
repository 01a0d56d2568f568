from .config import RunConfig, load_config
from .data import BipartiteGraph, InteractionDataset, SplitDataset
from .loader import Loader, load_dataset

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph",
    "InteractionDataset",
    "Loader",
    "RunConfig",
    "SplitDataset",
    "load_config",
    "load_dataset",
]
