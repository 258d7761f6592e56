"""Exception types shared across the toolkit."""


class MaskVeilError(Exception):
    """Base class for all toolkit errors."""


class DomainError(MaskVeilError):
    """An argument violates an operation's contract."""


class SingularityError(DomainError):
    """A computation has no solution (rank-deficient system, zero denominator)."""


class FormatError(MaskVeilError):
    """A file does not conform to its declared format."""


class BadMagicError(FormatError):
    """File magic does not match any known container type."""


class BadVersionError(FormatError):
    """Container format version is not supported."""


class ChecksumError(FormatError):
    """CRC32 footer does not match the file contents."""


class TruncatedFileError(FormatError):
    """File ends before the declared structure is complete."""


class UnsupportedImageError(FormatError):
    """Raster file is lossy or otherwise not a supported input format."""


class UnreachableTargetError(MaskVeilError):
    """The requested misclassification rate cannot be met even at the maximum budget."""

    def __init__(self, message: str, best_fc: float):
        super().__init__(message)
        self.best_fc = best_fc
