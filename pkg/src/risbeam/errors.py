"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible dimensions."""


class SingularMatrixError(ArithmeticError):
    """Gram matrix is numerically rank deficient."""


class ConfigError(ValueError):
    """A configuration value violates its documented range or relation."""


class EnumerationLimitError(RuntimeError):
    """Refused to enumerate a search space above the hard size guard."""


class DataFormatError(RuntimeError):
    """A persisted file does not parse as its declared format."""


class VersionMismatchError(DataFormatError):
    """File declares a format version this code does not read."""


class TruncatedFileError(DataFormatError):
    """File ends before the declared payload is complete."""


class ChecksumError(DataFormatError):
    """Stored checksum does not match the payload."""
