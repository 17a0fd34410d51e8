"""Exception hierarchy shared across the package."""


class WavetrafficError(Exception):
    """Base class for all package errors."""


class DimensionError(WavetrafficError):
    """Shapes or lengths of array arguments do not line up."""


class ParameterError(WavetrafficError):
    """A scalar or configuration argument is out of its valid range."""


class DataError(WavetrafficError):
    """Input data is malformed (ragged CSV, non-numeric cell, missing file)."""


class TrainingError(WavetrafficError):
    """The optimization loop hit a non-finite quantity."""
