"""Exception taxonomy shared across the package and mapped to CLI exit codes."""


class CredrateError(Exception):
    """Base class for all package-specific failures."""


class DataValidationError(CredrateError):
    """Input data violates a structural rule (bad file, bad portfolio, bad schema)."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)


class NumericalError(CredrateError):
    """A fit or estimator failed numerically (rank collapse, divergence, domain)."""


class DegenerateHierarchyError(NumericalError):
    """A variance-component denominator vanished; names the level that collapsed."""
