"""Exception hierarchy shared by the library and the command line."""


class PerovError(Exception):
    """Base class for all errors raised by perovdp."""


class InvalidInputError(PerovError, ValueError):
    """An argument violates the documented domain (shape, sign, finiteness)."""


class ModelError(PerovError, ValueError):
    """A dynamic program is misconfigured (empty action set, infinite reward, ...)."""


class PreconditionError(PerovError):
    """A routine was called outside the regime where its result is valid."""


class SpectralConditionError(PreconditionError):
    """The coefficient matrix is not certified to have spectral radius below one.

    The offending certificate is attached so callers can report it.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ConfigError(PerovError):
    """A configuration file could not be parsed into a valid model."""
