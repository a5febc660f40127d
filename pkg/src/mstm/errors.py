"""Exception types shared across the package."""


class MSTMError(Exception):
    """Base class for all package errors."""


class ContainerError(MSTMError, ValueError):
    """Malformed or inconsistent binary file.

    ``code`` distinguishes the failure so callers can branch on it.
    """

    BAD_MAGIC = "bad-magic"
    TRUNCATED = "truncated"
    SHAPE = "shape-inconsistency"
    CHECKSUM = "checksum"
    VERSION = "version"

    def __init__(self, code, message):
        super().__init__(f"[{code}] {message}")
        self.code = code


class ConfigError(MSTMError, ValueError):
    pass


class GeometryError(MSTMError, ValueError):
    pass


class PositivityError(MSTMError, FloatingPointError):
    pass


class NonFiniteError(MSTMError, FloatingPointError):
    pass


class StatsMismatchError(MSTMError):
    pass
