"""Exception hierarchy for the toolkit.

The three intermediate classes carry the CLI exit code contract:
UsageError -> 2, DataError -> 3, NumericError -> 4.
"""


class DrawageError(Exception):
    exit_code = 1


class UsageError(DrawageError):
    exit_code = 2


class DataError(DrawageError):
    exit_code = 3


class NumericError(DrawageError):
    exit_code = 4


# --- session parsing and splitting ---

class MissingColumn(DataError):
    pass


class MalformedRow(DataError):
    pass


class MissingSidecar(DataError):
    pass


class NonMonotonicTimestamp(DataError):
    pass


class EmptySession(DataError):
    pass


class UnknownGroupLabel(DataError):
    pass


class GroupTooSmall(DataError):
    pass


# --- channel extraction ---

class EmptyPenDown(DataError):
    pass


# --- warping and barycenters ---

class EmptySequence(DataError):
    pass


class EmptyInput(DataError):
    pass


class MissingGroup(DataError):
    pass


class MissingChannel(DataError):
    pass


# --- hidden Markov models ---

class DimensionMismatch(DataError):
    pass


class DegenerateData(NumericError):
    pass


# --- channel selection ---

class DegenerateScores(NumericError):
    pass


# --- experiment pipeline ---

class EmptyPredictions(DataError):
    pass


class OutOfRangeGroup(DataError):
    pass


class ConfigInvalid(UsageError):
    pass


class ModelFormatError(DataError):
    pass
