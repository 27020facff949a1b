"""Prototype Memory: a bounded, refreshable store of class prototypes for sampled-softmax training."""

from .core import ConfigError, LossConfig, PMConfig, ZeroVector, normalize
from .memory import DuplicateClass, MissingClass, PrototypeStore, blend, generate_prototype

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DuplicateClass",
    "LossConfig",
    "MissingClass",
    "PMConfig",
    "PrototypeStore",
    "ZeroVector",
    "blend",
    "generate_prototype",
    "normalize",
]
