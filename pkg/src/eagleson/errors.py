"""Exception types shared across modules."""


class InvalidModelError(ValueError):
    pass


class InvalidDensityError(ValueError):
    """A tilt failed validation.  Carries the computed integral or a witness."""

    def __init__(self, message, *, integral=None, witness=None):
        super().__init__(message)
        self.integral = integral
        self.witness = witness


class InvalidPairingError(ValueError):
    pass


class ResourceError(RuntimeError):
    """A request would exceed a declared memory or enumeration budget."""


class PreconditionError(ValueError):
    pass


class ResolutionError(ValueError):
    """A time grid is too coarse for the requested window."""
