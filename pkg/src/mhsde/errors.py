"""Exception hierarchy shared by the library and the CLI."""


class MhsdeError(Exception):
    """Base class for all errors raised by this package."""

    #: process exit code used by the command line front-end
    exit_code = 1


class DomainError(MhsdeError, ValueError):
    """An argument lies outside the domain of an operation."""

    exit_code = 2


class ConfigError(MhsdeError, ValueError):
    """A model or run configuration is malformed."""

    exit_code = 2


class RateBoundError(MhsdeError):
    """Total exit rate exceeded the dominating rate lambda."""

    exit_code = 3

    def __init__(self, message, time=None, rates=None, lam=None):
        super().__init__(message)
        self.time = time
        self.rates = dict(rates or {})
        self.lam = lam


class SolverBlowUpError(MhsdeError, ArithmeticError):
    """A micro-algorithm produced a non-finite state."""

    exit_code = 4

    def __init__(self, message, last_finite_time=None, mode=None):
        super().__init__(message)
        self.last_finite_time = last_finite_time
        self.mode = mode


class ResourceError(MhsdeError, MemoryError):
    """A request would exceed the configured memory budget."""

    exit_code = 5
