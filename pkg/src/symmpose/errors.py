"""Exception types shared across the package."""


class SymmposeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SymmposeError, ValueError):
    pass


class DegenerateError(SymmposeError, ArithmeticError):
    """Singular intrinsics or an anti-parallel viewing ray."""


class NumericError(SymmposeError, ArithmeticError):
    """Non-finite values or a vanishing norm."""


class GenerationError(SymmposeError, RuntimeError):
    pass


class TrainingError(SymmposeError, RuntimeError):
    pass


class FormatError(SymmposeError, ValueError):
    """Corrupt or unrecognised binary file."""


class IncompatibleError(SymmposeError, ValueError):
    """Artifacts written by incompatible format versions or models."""
