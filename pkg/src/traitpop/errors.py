"""Exception types shared across the package."""


class TraitpopError(Exception):
    """Base class for all package errors."""


class DimensionError(TraitpopError):
    """Array length does not match the grid it is paired with."""


class ExtinctionError(TraitpopError):
    """An operation that divides by the total mass received mass <= 0."""


class ConfigurationError(TraitpopError):
    """Invalid or incomplete configuration (missing kernels, empty probe family, ...)."""


class CapabilityError(TraitpopError):
    """The requested operation is not defined for this model family or kernel."""


class PreconditionError(TraitpopError):
    """A documented precondition of an operation was violated by the caller."""


class StiffnessError(TraitpopError):
    """Time stepping failed: step-size underflow or right-hand-side overflow."""


class DivergenceError(TraitpopError):
    """An improper integral (Laplace transform) diverges at the requested argument."""


class CFLViolation(TraitpopError):
    """A monotone-scheme step was rejected; carries the largest admissible step."""

    def __init__(self, message, required_dt):
        super().__init__(message)
        self.required_dt = required_dt


class IntegrationError(TraitpopError):
    """Time integration aborted; carries the partial trajectory computed so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
