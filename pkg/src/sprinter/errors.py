"""Exception classes shared across the package.

Each class maps to one CLI exit-code family (see cli.EXIT_CODES):
configuration problems, malformed input data, resource-budget refusals,
and numerical/convergence failures.
"""


class SprinterError(Exception):
    """Base class for all package errors."""


class ConfigError(SprinterError):
    """Invalid configuration value or flag combination."""


class InputError(SprinterError):
    """Malformed or non-finite input data."""


class SchemaError(InputError):
    """A model references columns that cannot be resolved against the data."""


class ResourceBudgetError(SprinterError):
    """A requested computation would exceed a configured resource cap."""


class ConvergenceError(SprinterError):
    """An iterative solver failed in a way that cannot be flagged softly."""


class DegenerateResidualError(SprinterError):
    """The screening residual has zero sample variance: every correlation
    with it is undefined."""


class NumericError(SprinterError):
    """A numerically singular or ill-conditioned linear system."""
