"""Exception types shared across the package."""


class CrackCsError(Exception):
    """Base class for package-specific failures."""


class ShapeMismatchError(CrackCsError, ValueError):
    """An array does not have the shape a contract requires."""

    def __init__(self, where, expected, actual):
        self.where = where
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{where}: expected shape {self.expected}, got {self.actual}")


class NonFiniteError(CrackCsError, FloatingPointError):
    """A NaN or infinity appeared where only finite values are allowed."""


class ConfigError(CrackCsError, ValueError):
    """A configuration file or value violates its schema."""


class IntegrityError(CrackCsError, ValueError):
    """A serialized artifact fails a checksum, magic, or version check."""
