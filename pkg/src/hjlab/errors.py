"""Exception types raised across the package."""


class HJLabError(Exception):
    """Base class for all package errors."""


class InvalidArgument(HJLabError, ValueError):
    """An input violates an operation's precondition."""


class ConstructionFailure(HJLabError, RuntimeError):
    """The modified Hamiltonian could not be made strictly convex."""

    def __init__(self, message, worst_eigenvalue=None, location=None):
        super().__init__(message)
        self.worst_eigenvalue = worst_eigenvalue
        self.location = location


class ConjugateFailure(HJLabError, RuntimeError):
    """The Legendre transform maximization did not converge."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(HJLabError, ValueError):
    """Invalid experiment configuration; ``pointer`` is a JSON pointer."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
