"""Typed errors raised across the package.

Every data problem maps to exactly one subclass of :class:`DataError`; the CLI
turns those into exit code 1.
"""

from __future__ import annotations


class AugmentVRError(Exception):
    """Base class for all package errors."""


class DataError(AugmentVRError, ValueError):
    """Input data violates a contract."""


class MissingColumn(DataError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"missing column: {column!r}")


class NonFiniteValue(DataError):
    def __init__(self, row: int, column: str):
        self.row = row
        self.column = column
        super().__init__(f"non-finite value in row {row}, column {column!r}")


class InvalidAssignment(DataError):
    def __init__(self, row: int, value: str):
        self.row = row
        self.value = value
        super().__init__(
            f"row {row}: assignment must be 'treatment' or 'control', got {value!r}"
        )


class EmptyGroup(DataError):
    def __init__(self, group: str):
        self.group = group
        super().__init__(f"group {group!r} has no units")


class DuplicateUnitId(DataError):
    def __init__(self, unit_id: str):
        self.unit_id = unit_id
        super().__init__(f"duplicate unit_id: {unit_id!r}")


class MalformedRecord(DataError):
    def __init__(self, index: int, reason: str = ""):
        self.index = index
        msg = f"malformed record at index {index}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class AsymmetricSigma(DataError):
    def __init__(self, experiment_id: str):
        self.experiment_id = experiment_id
        super().__init__(f"sigma for {experiment_id!r} is not symmetric")


class NotPositiveSemidefinite(DataError):
    def __init__(self, experiment_id: str):
        self.experiment_id = experiment_id
        super().__init__(f"sigma for {experiment_id!r} is not positive semidefinite")


class InvalidMetricSpec(DataError):
    pass


class ZeroDenominator(DataError):
    def __init__(self, group: str):
        self.group = group
        super().__init__(f"ratio denominator sums to zero in group {group!r}")


class MismatchedExperiment(DataError):
    pass


class DegenerateCovariate(DataError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"covariate {column!r} has (near) zero variance in both groups")


class SingularSystem(DataError):
    pass


class SingularDesign(DataError):
    pass


class NotPrePeriod(DataError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"covariate column {column!r} is not a pre_period column")


class InsufficientExperiments(DataError):
    def __init__(self, count: int):
        self.count = count
        super().__init__(f"need at least 2 experiments to fit a prior, got {count}")


class SingularPosterior(DataError):
    pass


class DegeneratePrior(DataError):
    pass


class DegenerateDenominator(DataError):
    pass
