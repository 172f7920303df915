"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numerical/simulation failures with 3.
"""


class SafemazeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SafemazeError):
    """Invalid geometry, config values, or unreadable/ill-formed input files."""


class FormatError(ConfigurationError):
    """A serialized artifact (dataset, buffer, checkpoint) failed to parse."""


class SimulationError(SafemazeError):
    """The contact solver failed to converge or produced non-finite state."""


class NumericalError(SafemazeError):
    """A training update produced NaN/inf losses or parameters."""
