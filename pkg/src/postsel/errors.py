"""Exception hierarchy.

Input problems map to CLI exit code 2, numerical/degeneracy problems to 3.
"""


class PostSelError(Exception):
    exit_code = 1


class InputError(PostSelError, ValueError):
    exit_code = 2


class NumericalError(PostSelError, ArithmeticError):
    exit_code = 3


class DegenerateError(NumericalError):
    pass


class EmptySelectionError(NumericalError):
    """Raised when the lasso selects nothing and inference has no target."""


class ConvergenceError(NumericalError):
    """Solver failed to converge; carries the last iterate and its violation."""

    def __init__(self, message, last_iterate=None, violation=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.violation = violation


class DegenerateWarning(RuntimeWarning):
    pass
