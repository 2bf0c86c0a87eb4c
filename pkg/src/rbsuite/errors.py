"""Exception hierarchy shared across the suite.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericalError (and subclasses) -> 3, ArtifactError -> 4.
"""


class RBSuiteError(Exception):
    """Base class for all package errors."""


class ConfigError(RBSuiteError):
    """Invalid configuration value or file."""


class NumericalError(RBSuiteError):
    """A numerical procedure failed (solver breakdown, divergence, ...)."""


class NonAdmissibleParameterError(NumericalError):
    """Parameter outside the admissible set (operator not positive-definite)."""


class DegenerateBasisError(NumericalError):
    """Reduced system numerically singular or no usable basis vectors."""


class DivergenceError(NumericalError):
    """A time-stepping scheme produced non-finite state."""


class ArtifactError(RBSuiteError):
    """Artifact missing, corrupted, or of an incompatible schema version."""
