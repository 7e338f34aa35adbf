"""Exception hierarchy. The CLI maps these onto exit codes."""


class TensorVoteError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(TensorVoteError, ValueError):
    """Malformed or non-finite input."""


class DegenerateInputError(TensorVoteError, ValueError):
    """Input for which the requested quantity is undefined."""


class UnderflowError(TensorVoteError, ArithmeticError):
    """A proximity weight too small to invert."""


class NumericalFailure(TensorVoteError):
    """Iterative estimation could not produce a usable answer."""


class DegenerateSupportError(NumericalFailure):
    """Too few points carry inlier weight to determine the model."""


class UnderdeterminedError(NumericalFailure, ValueError):
    """Fewer observations than unknowns."""
