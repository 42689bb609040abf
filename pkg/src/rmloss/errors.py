"""Exception hierarchy shared by every rmloss module."""


class RMLossError(Exception):
    """Base class for all rmloss errors."""


class DimensionError(RMLossError, ValueError):
    """Shapes, ranks or extents are incompatible."""


class NumericError(RMLossError, ArithmeticError):
    """Non-finite or out-of-range numeric input."""


class LabelError(RMLossError, ValueError):
    """A class label falls outside the channel range."""


class ConfigurationError(RMLossError, ValueError):
    """Invalid configuration value.

    ``field`` names the offending configuration key when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DegenerateMassError(RMLossError, ZeroDivisionError):
    """Zeroth moment is zero so the centroid is undefined."""


class DivergenceError(RMLossError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UndefinedDistanceError(RMLossError, ValueError):
    """Surface distance requested for an empty surface."""


class DatasetError(RMLossError, OSError):
    """Base class for dataset/checkpoint persistence errors."""


class ManifestError(DatasetError):
    """Manifest is missing or malformed."""


class VersionError(DatasetError):
    """Unknown format version or bad magic bytes."""


class IntegrityError(DatasetError):
    """Manifest contents disagree with the files on disk."""


class ExtentMismatchError(DatasetError):
    """Stored extents disagree with the declared ones."""
