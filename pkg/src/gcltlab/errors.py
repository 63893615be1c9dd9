"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class GuardError(RuntimeError):
    """A numerical guard tripped (state-space size, CFL, grid coverage, ...)."""
