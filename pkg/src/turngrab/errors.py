"""Exception hierarchy.

Every error raised on bad input data derives from :class:`DataError`; the CLI
maps those to exit code 2.
"""


class DataError(ValueError):
    """Base class for malformed or unusable input data."""


# dataio
class MissingColumn(DataError):
    pass


class NonMonotonicTime(DataError):
    def __init__(self, face_id, row):
        super().__init__(f"time not strictly increasing for face {face_id!r} at row {row}")
        self.face_id = face_id
        self.row = row


class NonNumericField(DataError):
    def __init__(self, row, col, detail="not a finite number"):
        super().__init__(f"row {row}, column {col!r}: {detail}")
        self.row = row
        self.col = col


class AmbiguousMatch(DataError):
    def __init__(self, time):
        super().__init__(f"more than one bounding box pairing at t={time}")
        self.time = time


class EmptyInput(DataError):
    pass


class TooFewFrames(DataError):
    pass


class VariableFrameRate(DataError):
    pass


# segmentation
class UnknownLabel(DataError):
    pass


# pu risk
class EmptyBatch(DataError):
    pass


class SingleClass(DataError):
    pass


# net
class ShapeMismatch(DataError):
    pass


class NonFiniteActivation(DataError):
    pass


class EmptyDataset(DataError):
    pass


class DivergenceDetected(RuntimeError):
    pass


# metrics
class LengthMismatch(DataError):
    pass


class Empty(DataError):
    pass


class NoQualifyingTurns(DataError):
    pass


class ZeroTotalTime(DataError):
    pass


# tuner
class CheckpointCorrupt(DataError):
    pass


# effect
class NoUsableEvents(DataError):
    pass


class InvalidBuffer(DataError):
    pass


# synth
class InvalidConfig(DataError):
    pass
