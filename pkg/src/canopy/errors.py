"""Exception types shared across the package.

ValueError is used for programming-contract violations (bad shapes, bad
arguments to ops).  The classes below cover data problems that a CLI user
can hit with on-disk inputs, so the CLI can map them to exit codes.
"""


class CanopyError(Exception):
    """Base class for package-specific errors."""


class FormatError(CanopyError):
    """Malformed or inconsistent on-disk data (CLI exit code 2)."""


class RasterFormatError(FormatError):
    pass


class PointsFormatError(FormatError):
    pass


class WeightsFormatError(FormatError):
    pass


class CrsMismatchError(FormatError):
    """Raster and point set disagree on coordinate reference system."""


class NumericError(CanopyError):
    """Non-finite values where finite ones are required (CLI exit code 3)."""
