"""dualvit: a two-pathway vision transformer backbone, built on a small
reverse-mode autodiff engine, with analytic cost accounting, gradient
checking, toy-scale training, and binary dataset/checkpoint formats."""

from .errors import (ConfigError, ContractError, DimensionError, DualVitError,
                     FormatError, InputError)
from .model import ModelConfig, StageSpec, build_model, preset_config
from .tensor import Tensor

__all__ = [
    "ConfigError", "ContractError", "DimensionError", "DualVitError",
    "FormatError", "InputError", "ModelConfig", "StageSpec", "Tensor",
    "build_model", "preset_config",
]

__version__ = "0.1.0"
