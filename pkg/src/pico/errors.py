class PicoError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(PicoError, ValueError):
    """Invalid configuration, shapes or arguments."""


class CorpusFormatError(PicoError, ValueError):
    """A corpus or checkpoint directory on disk is malformed."""


class NumericalError(PicoError, FloatingPointError):
    """Non-finite values appeared where finite ones are required."""
