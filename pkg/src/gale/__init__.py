"""Graph-network reconstruction of flow fields around airfoils from surface pressure."""

from .errors import GaleError
from .graph import FlowGraph, NodeType, validate_graph
from .model import FlowModel, ModelConfig, reconstruct
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["FlowGraph", "FlowModel", "GaleError", "ModelConfig", "NodeType", "TrainConfig",
           "reconstruct", "train", "validate_graph", "__version__"]
