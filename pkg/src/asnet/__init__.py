"""asnet: attention agents with learned attention control, on a tape-based
float64 autodiff core, with gridworld tasks, PPO training, and a
reproducible experiment harness."""

__version__ = "0.1.0"

from .errors import (
    AsnetError,
    CheckpointError,
    ConfigError,
    DimensionError,
    InvariantError,
)
from .tensor import Graph, Tensor, backward

__all__ = [
    "AsnetError",
    "CheckpointError",
    "ConfigError",
    "DimensionError",
    "InvariantError",
    "Graph",
    "Tensor",
    "backward",
    "__version__",
]
