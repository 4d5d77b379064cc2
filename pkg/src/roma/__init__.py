"""Self-supervised triplet learning with random bilinear similarity maps."""

from .config import ExperimentConfig
from .encoder import EncoderParams, encode, init_params
from .errors import (BatchSizeError, ConfigError, ContractError, DimensionError, FormatError,
                     GenerationError, NumericError, RomaError)
from .losses import LossParams, nt_xent_roma, simsiam_roma, triplet_ce_loss
from .rngmap import RandomMap, RegenSchedule, generate, project
from .trainer import train

__all__ = [
    "BatchSizeError", "ConfigError", "ContractError", "DimensionError", "EncoderParams",
    "ExperimentConfig", "FormatError", "GenerationError", "LossParams", "NumericError",
    "RandomMap", "RegenSchedule", "RomaError", "encode", "generate", "init_params",
    "nt_xent_roma", "project", "simsiam_roma", "train", "triplet_ce_loss",
]
__version__ = "0.1.0"
