"""Symmetry-agnostic 6D pose estimation by matching against an SO(3) embedding library."""
from .errors import (DegenerateError, FormatError, GenerationError, IncompatibleError, InvalidInputError,
                     NumericError, SymmposeError, TrainingError)

__version__ = "0.1.0"

__all__ = ["DegenerateError", "FormatError", "GenerationError", "IncompatibleError", "InvalidInputError",
           "NumericError", "SymmposeError", "TrainingError", "__version__"]
