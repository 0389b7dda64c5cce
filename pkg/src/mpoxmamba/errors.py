"""Exception types shared across the library.

The CLI maps these onto process exit codes: config/usage problems exit 1,
data problems (datasets, images, checkpoints) exit 2, numeric failures 3.
"""


class MpoxMambaError(Exception):
    """Base class for all library errors."""


class DimensionError(MpoxMambaError):
    """Tensor shapes are inconsistent with an operation's contract."""


class ConfigError(MpoxMambaError):
    """A configuration value violates its invariants."""


class DataError(MpoxMambaError):
    """A dataset, image file, or checkpoint cannot be used."""


class NumericError(MpoxMambaError):
    """A computation produced non-finite values."""
