class TradeLabError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(TradeLabError):
    """User-supplied input (file, config, parameters) failed validation."""
