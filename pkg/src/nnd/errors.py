class NNDError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(NNDError, ValueError):
    """Bad input: malformed files, mismatched metadata, invalid parameters."""


class DivergenceError(NNDError, ArithmeticError):
    """A numerical run left the representable range (diverged sampler or training)."""
