class DataError(ValueError):
    """Unreadable, malformed or empty interaction data."""


class ConfigError(ValueError):
    """Invalid training configuration."""


class NumericalError(ArithmeticError):
    """Non-finite loss or gradient during training."""
