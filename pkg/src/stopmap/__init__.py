"""Mouse sex/age stereotype classification from stop-position time series.

Pipeline: stop detection over (t, x, y) trajectories -> stacked 2D
occupancy histograms -> shallow dual-branch CNN trained from scratch
under leave-one-cage-out cross-validation, with PCA+1-NN / linear SVM
baselines and activation-map explainability, plus a deterministic
synthetic cage simulator for end-to-end verification.
"""

from .errors import ConfigError, DataError, NumericError, PipelineError, ShapeError
from .nncore import CLASS_NAMES, ModelParams, TrainConfig
from .featurize import FeaturizeConfig, HistogramStack, StopEvent
from .dataset import CageLayout, ClassProfile, Recording, SimConfig

__all__ = [
    "CLASS_NAMES",
    "CageLayout",
    "ClassProfile",
    "ConfigError",
    "DataError",
    "FeaturizeConfig",
    "HistogramStack",
    "ModelParams",
    "NumericError",
    "PipelineError",
    "Recording",
    "ShapeError",
    "SimConfig",
    "StopEvent",
    "TrainConfig",
]

__version__ = "0.1.0"
