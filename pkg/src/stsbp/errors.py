"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised for inconsistent or unsupported solver configurations."""


class InvalidProblemError(ValueError):
    """Raised when problem data violates the model hypotheses."""


class SolverError(RuntimeError):
    """Raised when a slab system cannot be solved to tolerance."""

    def __init__(self, message: str, slab: int | None = None):
        if slab is not None:
            message = f"slab {slab}: {message}"
        super().__init__(message)
        self.slab = slab
