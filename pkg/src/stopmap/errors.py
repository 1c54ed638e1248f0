"""Exception types shared across the pipeline, with CLI exit codes."""


class PipelineError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this family."""

    exit_code = 1


class ConfigError(PipelineError):
    """Invalid or missing configuration."""

    exit_code = 1


class DataError(PipelineError):
    """Malformed input data (files, trajectories, labels)."""

    exit_code = 2


class ShapeError(DataError):
    """Tensor/array shape mismatch."""


class NumericError(PipelineError):
    """Non-finite loss or gradient during training."""

    exit_code = 3
