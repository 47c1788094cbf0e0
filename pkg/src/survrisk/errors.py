"""Exception hierarchy.

Every error raised by the package derives from :class:`SurvriskError` and
belongs to one of three families that map onto CLI exit codes: configuration
(2), data (3) and numeric (4).
"""
from __future__ import annotations


class SurvriskError(Exception):
    exit_code = 1


class ConfigError(SurvriskError):
    exit_code = 2


class DataError(SurvriskError):
    exit_code = 3


class NumericError(SurvriskError):
    exit_code = 4


class InvalidConfig(ConfigError):
    pass


class MissingColumn(DataError):
    def __init__(self, file: str, column: str):
        super().__init__(f"{file}: missing column {column!r}")
        self.file = file
        self.column = column


class UnparseableValue(DataError):
    def __init__(self, file: str, row: int, column: str, value: str, reason: str = ""):
        msg = f"{file}: row {row}, column {column!r}: cannot parse {value!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.file = file
        self.row = row
        self.column = column


class UnknownPatient(DataError):
    def __init__(self, encounter_id: str, patient_id: str):
        super().__init__(f"encounter {encounter_id!r} references unknown patient {patient_id!r}")
        self.encounter_id = encounter_id
        self.patient_id = patient_id


class EmptyCohort(DataError):
    pass


class AllMissingColumn(DataError):
    def __init__(self, name: str):
        super().__init__(f"column {name!r} has no observed training value")
        self.name = name


class UnknownColumn(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class NoCoveredInstances(DataError):
    pass


class EmptyPeriod(DataError):
    pass


class NoEvents(NumericError):
    pass


class Singular(NumericError):
    pass


class InfeasibleFolds(NumericError):
    pass


class NoComparablePairs(NumericError):
    pass


class DegenerateWeights(NumericError):
    pass


class DegenerateMatrix(NumericError):
    pass


class OneClassOnly(NumericError):
    pass


class NonConvergenceWarning(UserWarning):
    """Newton iterations hit ``max_iter``; the last iterate is returned."""


class TruncationWarning(UserWarning):
    """IPCW weights were truncated where the censoring survival fell below the floor."""
