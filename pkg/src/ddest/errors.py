"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError/ValidationError -> 2,
DataFormatError -> 3, NumericalError -> 4.
"""


class DdestError(Exception):
    """Base class for all package errors."""


class ValidationError(DdestError, ValueError):
    """Invalid parameter, shape, or domain value."""


class ConfigError(DdestError, ValueError):
    """Invalid or inconsistent experiment configuration."""


class CellOverflowError(ValidationError):
    """More paths fell into one grid cell than the encoding can represent."""

    def __init__(self, cell, count, capacity):
        self.cell = tuple(cell)
        self.count = int(count)
        self.capacity = int(capacity)
        super().__init__(
            f"cell {self.cell} holds {self.count} paths, capacity is {self.capacity}"
        )


class DataFormatError(DdestError, IOError):
    """Malformed dataset or checkpoint container."""


class VersionMismatchError(DataFormatError):
    """Container schema version is not supported."""


class TruncatedFileError(DataFormatError):
    """Container ends before the declared payload does."""


class ChecksumError(DataFormatError):
    """Stored payload checksum does not match the data."""


class NumericalError(DdestError, RuntimeError):
    """A numerical routine failed (divergence, singular system, ...)."""


class DegenerateBasisError(NumericalError):
    """Least-squares basis is rank deficient (near-duplicate paths)."""

    def __init__(self, pair, coherence):
        self.pair = tuple(pair)
        self.coherence = float(coherence)
        super().__init__(
            f"paths {self.pair} are numerically collinear (coherence {self.coherence:.6f})"
        )
