"""Exception hierarchy shared across the package."""


class NumericalError(RuntimeError):
    """A solver or quadrature routine failed to reach its target accuracy."""


class UsageError(ValueError):
    """Invalid configuration or arguments supplied by the caller."""
