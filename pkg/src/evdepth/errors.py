"""Exception hierarchy shared by the whole toolkit.

Everything raised on purpose derives from EvDepthError so the CLI can map
data/contract problems to exit code 2 while plain OSError stays exit code 3.
"""


class EvDepthError(Exception):
    """Base class for all toolkit errors."""


class FormatError(EvDepthError):
    """Malformed file content (bad header, bad record, bad field value)."""


class OrderingError(EvDepthError):
    """Event timestamps regress where a sorted stream is required."""


class BoundsError(EvDepthError):
    """Pixel coordinate outside the sensor grid."""


class ParameterError(EvDepthError):
    """Invalid parameter value (e.g. zero bins, zero window)."""


class DegenerateIntervalError(EvDepthError):
    """Zero-length slice interval where a positive length is required."""


class DomainError(EvDepthError):
    """Value outside the mathematical domain (e.g. non-positive intensity)."""


class InsufficientInputError(EvDepthError):
    """Not enough input to perform the operation (e.g. a single frame)."""


class InsufficientSupportError(EvDepthError):
    """Too few valid pixels for the requested computation."""


class ContractError(EvDepthError):
    """Shape or structural mismatch between cooperating arguments."""


class BuildError(EvDepthError):
    """Dataset manifest construction failed (missing or inconsistent inputs)."""
