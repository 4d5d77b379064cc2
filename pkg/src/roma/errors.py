"""Exception hierarchy shared across the package."""


class RomaError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RomaError, ValueError):
    pass


class BatchSizeError(RomaError, ValueError):
    pass


class ContractError(RomaError, ValueError):
    pass


class NumericError(RomaError, ArithmeticError):
    pass


class ConfigError(RomaError, ValueError):
    """Invalid or inconsistent configuration value."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class FormatError(RomaError, ValueError):
    """A file on disk does not match its binary or text layout."""


class GenerationError(RomaError, ValueError):
    pass
