"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage/configuration problems exit 1,
bad or missing data exits 2, failures during training/runtime exit 3.
"""


class SegkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(SegkitError, ValueError):
    """An invalid spec, config file, or argument combination."""


class ShapeError(SegkitError, ValueError):
    """A tensor did not have the expected shape or channel count."""


class DataError(SegkitError):
    """Missing, malformed, or inconsistent data on disk."""


class TrainingError(SegkitError):
    """A failure inside a training or experiment run."""
