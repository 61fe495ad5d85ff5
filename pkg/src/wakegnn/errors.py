"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors -> 1,
ConfigError -> 2, DataError (and file-format subclasses) -> 3,
NumericalError -> 4.
"""


class WakeGnnError(Exception):
    """Base class for all package errors."""


class ConfigError(WakeGnnError):
    """Invalid or inconsistent configuration input."""


class DataError(WakeGnnError):
    """Invalid data content (graphs, samples, layouts, rotor files)."""


class FormatError(DataError):
    """Malformed binary file."""


class MagicMismatchError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FormatError):
    """File carries an unsupported format version."""


class TruncationError(FormatError):
    """File ended inside a section.

    `section` names the block that could not be read in full.
    """

    def __init__(self, section: str, expected: int, got: int):
        self.section = section
        self.expected = expected
        self.got = got
        super().__init__(
            f"truncated {section}: expected {expected} bytes, got {got}"
        )


class NumericalError(WakeGnnError):
    """Non-finite values or numerically invalid operation."""


class DomainError(DataError):
    """Query point lies outside the covered spatial domain."""
