"""Local-global multiscale model reduction (GMsFEM + POD) for transient flow in random media."""

from .errors import ConfigError, MsromError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "MsromError", "NumericalError", "__version__"]
