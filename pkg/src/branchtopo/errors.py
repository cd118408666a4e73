"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class BranchTopoError(Exception):
    """Base class for all package errors."""


class DataError(BranchTopoError, ValueError):
    """Invalid, empty or inconsistent input data."""


class ShapeError(BranchTopoError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(BranchTopoError, ArithmeticError):
    """Non-finite values encountered (loss, gradient)."""
