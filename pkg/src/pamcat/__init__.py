"""Parabolic Anderson model with a simple-exclusion catalyst on Z^3: simulators and oracles."""
__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .errors import NumericalError, ValidationError  # noqa: E402

__all__ = ["BACKEND", "NumericalError", "ValidationError", "__version__"]
