"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class MsromError(Exception):
    """Base class for all package errors."""


class ConfigError(MsromError, ValueError):
    """Invalid configuration or input data (CLI exit code 2)."""


class NumericalError(MsromError, RuntimeError):
    """A solver failed to converge or a factorization broke down (CLI exit code 1)."""
