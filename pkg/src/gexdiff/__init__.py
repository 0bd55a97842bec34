"""Diffusion-transformer generator for single-cell expression matrices."""

from .dataset import ExpressionMatrix, PreprocessSpec, preprocess, truncate_negatives, zero_negate
from .denoiser import DenoiserConfig, DenoiserModel
from .errors import GexdiffError, InputError, NumericError
from .rng import Xoshiro256
from .sampler import SampleRequest, TauSchedule, make_tau, sample
from .schedule import NoiseSchedule, linear_schedule
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DenoiserConfig", "DenoiserModel", "ExpressionMatrix", "GexdiffError", "InputError",
    "NoiseSchedule", "NumericError", "PreprocessSpec", "SampleRequest", "TauSchedule",
    "TrainConfig", "Xoshiro256", "linear_schedule", "make_tau", "preprocess", "sample",
    "train", "truncate_negatives", "zero_negate",
]
