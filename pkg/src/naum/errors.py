"""Exception types raised by the solver library."""


class NaumError(Exception):
    """Base class for all library errors."""


class InvalidDimensions(NaumError, ValueError):
    pass


class NonFiniteInput(NaumError, ValueError):
    pass


class InvalidParameter(NaumError, ValueError):
    pass


class UnsupportedScheme(NaumError, ValueError):
    """Update scheme cannot be used with the given regularizer or parameters."""


class InfeasibleInitialization(NaumError, ValueError):
    pass


class InvalidData(NaumError, ValueError):
    pass


class InvalidConfig(NaumError, ValueError):
    pass


class ParseError(NaumError, ValueError):
    """Malformed matrix file. ``lineno`` is 1-based, or None for binary input."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class TrialError(NaumError):
    """A solve inside a benchmark run failed; tagged with its algorithm and seed."""

    def __init__(self, algorithm, seed, cause):
        super().__init__(f"{algorithm} (seed {seed}) failed: {cause}")
        self.algorithm = algorithm
        self.seed = seed
        self.cause = cause


class CacheDrift(RuntimeWarning):
    """Cached Gram blocks disagreed with a fresh recomputation; the cache was refreshed."""
