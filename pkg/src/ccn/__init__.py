"""Crossed co-attention sequence transduction in numpy.

Two symmetric encoder branches exchange V/K/Q gates through a crossed
routing, a dual-branch decoder reads both memories, and a vanilla
transformer baseline shares the same substrate. Everything is built on an
explicit-backward tensor tape verified by finite differences.
"""

from .errors import (
    CcnError,
    DataError,
    DeterminismError,
    DivergenceError,
    MaskError,
    ShapeError,
    VocabError,
)
from .kernels import active_backend
from .model import ModelConfig, PRESETS, build_model, count_parameters, preset
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "CcnError",
    "DataError",
    "DeterminismError",
    "DivergenceError",
    "MaskError",
    "ShapeError",
    "VocabError",
    "ModelConfig",
    "PRESETS",
    "Rng",
    "active_backend",
    "build_model",
    "count_parameters",
    "preset",
    "__version__",
]
