"""Exception hierarchy. The CLI maps these onto process exit codes."""


class GaaError(Exception):
    """Base class for all package errors."""


class InputError(GaaError, ValueError):
    """Malformed or inconsistent input data (exit code 2)."""


class NumericalError(GaaError, ArithmeticError):
    """Numerical failure such as divergence or non-convergence (exit code 3)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DivergenceError(NumericalError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
