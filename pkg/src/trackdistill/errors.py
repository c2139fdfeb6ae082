"""Exception types shared across the package."""


class TrackDistillError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TrackDistillError):
    """An argument violates a documented precondition (bad box, empty list, ...)."""


class ParseError(TrackDistillError):
    """A file on disk is malformed. Message names the file and, where known, the line."""


class ConfigError(TrackDistillError):
    """A configuration key is unknown, missing, or has an out-of-range value."""


class ProtocolError(TrackDistillError):
    """A stateful object was driven out of order (step after done, predict before init)."""


class TeacherError(TrackDistillError):
    """A teacher session failed (crash, timeout, malformed reply).

    Carries the teacher id so callers can report which member of a pool died.
    """

    def __init__(self, teacher_id: str, message: str):
        super().__init__(f"teacher {teacher_id!r}: {message}")
        self.teacher_id = teacher_id


class CheckpointError(TrackDistillError):
    """A checkpoint file is corrupt or belongs to a different architecture."""


class NumericError(TrackDistillError):
    """A numeric invariant failed (non-finite loss or gradient, failed verification)."""
