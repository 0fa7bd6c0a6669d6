"""Exception hierarchy for kelpseg.

Every error raised deliberately by the library derives from
:class:`KelpSegError`, so callers (and the CLI) can catch the whole family
with one ``except`` clause.
"""


class KelpSegError(Exception):
    """Base class for all kelpseg errors."""


class MissingBand(KelpSegError):
    pass


class ShapeMismatch(KelpSegError, ValueError):
    pass


class NonBinaryMask(KelpSegError, ValueError):
    pass


class DuplicateChipId(KelpSegError):
    pass


class EmptyDirectory(KelpSegError):
    pass


class InsufficientData(KelpSegError):
    pass


class InvalidSize(KelpSegError, ValueError):
    pass


class InvalidPairing(KelpSegError, ValueError):
    pass


class BackendUnavailable(KelpSegError):
    pass


class EmptyDataset(KelpSegError):
    pass


class NonFiniteLoss(KelpSegError, FloatingPointError):
    pass


class EmptyGroup(KelpSegError, ValueError):
    pass


class InconsistentTotals(KelpSegError, ValueError):
    pass


class CheckpointNotFound(KelpSegError, FileNotFoundError):
    pass


class ConfigError(KelpSegError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError, ValueError):
    """Invalid configuration value; ``field`` holds the dotted path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class MissingArtifact(KelpSegError, FileNotFoundError):
    """A pipeline stage's input from an earlier stage is absent."""
