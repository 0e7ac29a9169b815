"""Exception hierarchy shared across the package."""


class LcirtError(Exception):
    """Base class for all package errors."""


class InvalidDesignError(LcirtError):
    """Design, config or tie specification is structurally inconsistent."""


class InvalidParameterError(LcirtError):
    """Parameter values violate a structural requirement."""


class InvalidOptionsError(LcirtError):
    """Estimation options outside their legal range."""


class DataFormatError(LcirtError):
    """A data or design file could not be parsed; message carries the position."""


class ZeroVarianceError(LcirtError):
    """A latent dimension has no spread in its support points."""


class EnumerationTooLargeError(LcirtError):
    """Brute-force pattern enumeration refused for an oversized instance."""
