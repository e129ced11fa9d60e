"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class IdentifiabilityError(ValueError):
    """A configuration violates one or more identifiability inequalities.

    ``violations`` holds one human-readable string per binding inequality.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("identifiability violated: " + "; ".join(self.violations))


class FilteringError(ValueError):
    """The RIS schedule cannot be right-inverted."""


class InversionDomainError(ValueError):
    """Spatial frequencies fall outside the invertible angle branch."""


class UnsupportedSizeError(ValueError):
    """Requested size is not supported by a construction (e.g. Hadamard)."""
