"""Wavelet-based spatiotemporal traffic forecasting with conformal
interval forecasts and a rank-based evaluation harness.
"""

from . import conformal, data_io, evalbench, graph, model, optim, tensor, training, wavelet
from .errors import (
    DataError,
    DimensionError,
    ParameterError,
    TrainingError,
    WavetrafficError,
)

__version__ = "0.1.0"

__all__ = [
    "conformal",
    "data_io",
    "evalbench",
    "graph",
    "model",
    "optim",
    "tensor",
    "training",
    "wavelet",
    "WavetrafficError",
    "DimensionError",
    "ParameterError",
    "DataError",
    "TrainingError",
    "__version__",
]
