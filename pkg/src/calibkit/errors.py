"""Error types shared across the toolkit."""


class DataFormatError(ValueError):
    """Raised when an input file is malformed (bad header, row width, label range)."""


class NumericalError(RuntimeError):
    """Raised when an optimization produces non-finite values."""
