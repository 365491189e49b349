"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with an operation's contract."""


class ParameterError(ValueError):
    """A scalar parameter is outside its admissible range."""


class NumericError(ValueError):
    """Values violate a numeric precondition (negative variance, non-finite data)."""


class FormatError(ValueError):
    """A serialized artifact (IDX file, checkpoint) is malformed."""


class ConfigError(ValueError):
    """An experiment configuration is missing or invalid."""
