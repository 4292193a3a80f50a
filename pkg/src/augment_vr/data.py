"""Experiment data: unit-level tables and experiment-level decomposed deltas.

Unit-level data is stored column-wise (one float array per metric column plus a
boolean treatment mask) so that simulations with 10^5 units stay cheap.
``ExperimentData.units`` rebuilds the row view on demand.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AsymmetricSigma,
    DataError,
    DuplicateUnitId,
    EmptyGroup,
    InvalidAssignment,
    MalformedRecord,
    MissingColumn,
    NonFiniteValue,
    NotPositiveSemidefinite,
)

TREATMENT = "treatment"
CONTROL = "control"
GROUPS = (TREATMENT, CONTROL)
COLUMN_KINDS = frozenset({"outcome", "pre_period", "numerator", "denominator", "component"})

PSD_EIG_TOL = 1e-10
SYMMETRY_RTOL = 1e-8


@dataclass(frozen=True)
class UnitRecord:
    unit_id: str
    assignment: str
    values: Mapping[str, float]


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ExperimentData:
    """One experiment's unit-level data.

    ``treatment`` is a boolean mask over units; ``columns`` maps every column
    named in ``column_schema`` to a float array of the same length. When
    ``unit_ids`` is None, ids ``"0", "1", ...`` are implied.
    """

    experiment_id: str
    treatment: np.ndarray
    columns: Mapping[str, np.ndarray]
    column_schema: Mapping[str, str]
    unit_ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        mask = np.asarray(self.treatment)
        if mask.ndim != 1 or mask.dtype != bool:
            raise DataError("treatment must be a 1-d boolean array")
        n = mask.shape[0]
        for col, kind in self.column_schema.items():
            if kind not in COLUMN_KINDS:
                raise DataError(f"unknown column kind {kind!r} for {col!r}")
        cols = {}
        for col in self.column_schema:
            if col not in self.columns:
                raise MissingColumn(col)
            arr = np.asarray(self.columns[col], dtype=float)
            if arr.shape != (n,):
                raise DataError(f"column {col!r} has shape {arr.shape}, expected ({n},)")
            bad = ~np.isfinite(arr)
            if bad.any():
                raise NonFiniteValue(int(np.argmax(bad)) + 1, col)
            cols[col] = _readonly(arr)
        if not mask.any():
            raise EmptyGroup(TREATMENT)
        if mask.all():
            raise EmptyGroup(CONTROL)
        if self.unit_ids is not None:
            ids = tuple(str(u) for u in self.unit_ids)
            if len(ids) != n:
                raise DataError("unit_ids length does not match data")
            seen: set[str] = set()
            for uid in ids:
                if uid in seen:
                    raise DuplicateUnitId(uid)
                seen.add(uid)
            object.__setattr__(self, "unit_ids", ids)
        object.__setattr__(self, "treatment", _readonly(mask))
        object.__setattr__(self, "columns", MappingProxyType(cols))
        object.__setattr__(self, "column_schema", MappingProxyType(dict(self.column_schema)))

    @classmethod
    def from_units(
        cls, experiment_id: str, units: Sequence[UnitRecord], column_schema: Mapping[str, str]
    ) -> "ExperimentData":
        mask = []
        for i, u in enumerate(units, start=1):
            a = u.assignment.lower()
            if a not in GROUPS:
                raise InvalidAssignment(i, u.assignment)
            mask.append(a == TREATMENT)
        columns = {}
        for col in column_schema:
            vals = []
            for u in units:
                if col not in u.values:
                    raise MissingColumn(col)
                vals.append(u.values[col])
            columns[col] = np.array(vals, dtype=float)
        return cls(
            experiment_id,
            np.array(mask, dtype=bool),
            columns,
            column_schema,
            tuple(u.unit_id for u in units),
        )

    @property
    def n(self) -> int:
        return int(self.treatment.shape[0])

    @property
    def n_treatment(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treatment

    def ids(self) -> tuple[str, ...]:
        if self.unit_ids is not None:
            return self.unit_ids
        return tuple(str(i) for i in range(self.n))

    def column(self, name: str, group: str | None = None) -> np.ndarray:
        if name not in self.columns:
            raise MissingColumn(name)
        arr = self.columns[name]
        if group is None:
            return arr
        return arr[self.group_mask(group)]

    def group_mask(self, group: str) -> np.ndarray:
        if group == TREATMENT:
            return self.treatment
        if group == CONTROL:
            return ~self.treatment
        raise ValueError(f"group must be 'treatment' or 'control', got {group!r}")

    def kind_of(self, name: str) -> str:
        if name not in self.column_schema:
            raise MissingColumn(name)
        return self.column_schema[name]

    @property
    def units(self) -> list[UnitRecord]:
        names = list(self.column_schema)
        rows = []
        for i, uid in enumerate(self.ids()):
            values = {c: float(self.columns[c][i]) for c in names}
            rows.append(UnitRecord(uid, TREATMENT if self.treatment[i] else CONTROL, values))
        return rows

    def with_columns(self, extra: Mapping[str, np.ndarray], kind: str) -> "ExperimentData":
        """Copy with additional columns of a single kind."""
        columns = dict(self.columns)
        schema = dict(self.column_schema)
        for name, values in extra.items():
            columns[name] = values
            schema[name] = kind
        return ExperimentData(self.experiment_id, self.treatment, columns, schema, self.unit_ids)

    def same_values(self, other: "ExperimentData") -> bool:
        """Structural equality (bit-exact on values)."""
        return (
            self.experiment_id == other.experiment_id
            and self.ids() == other.ids()
            and dict(self.column_schema) == dict(other.column_schema)
            and np.array_equal(self.treatment, other.treatment)
            and all(np.array_equal(self.columns[c], other.columns[c]) for c in self.column_schema)
        )


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise NonFiniteValue(row, col) from None
    if not math.isfinite(value):
        raise NonFiniteValue(row, col)
    return value


def load_unit_csv(
    path: str | Path, schema: Mapping[str, str], experiment_id: str | None = None
) -> ExperimentData:
    """Read a unit-level CSV with columns ``unit_id, assignment, <schema columns>``.

    Columns not named in ``schema`` are ignored. Rows are numbered from 1
    (the first line after the header) in error messages.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for required in ("unit_id", "assignment", *schema):
            if required not in header:
                raise MissingColumn(required)
        ids: list[str] = []
        mask: list[bool] = []
        values: dict[str, list[float]] = {c: [] for c in schema}
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=1):
            uid = row["unit_id"]
            if uid in seen:
                raise DuplicateUnitId(uid)
            seen.add(uid)
            raw = (row["assignment"] or "").strip()
            a = raw.lower()
            if a not in GROUPS:
                raise InvalidAssignment(row_no, raw)
            ids.append(uid)
            mask.append(a == TREATMENT)
            for col in schema:
                values[col].append(_parse_float(row[col], row_no, col))
    if not any(mask):
        raise EmptyGroup(TREATMENT)
    if all(mask):
        raise EmptyGroup(CONTROL)
    return ExperimentData(
        experiment_id if experiment_id is not None else path.stem,
        np.array(mask, dtype=bool),
        {c: np.array(v, dtype=float) for c, v in values.items()},
        schema,
        tuple(ids),
    )


def write_unit_csv(data: ExperimentData, path: str | Path) -> None:
    names = list(data.column_schema)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "assignment", *names])
        cols = [data.columns[c] for c in names]
        for i, uid in enumerate(data.ids()):
            writer.writerow(
                [uid, TREATMENT if data.treatment[i] else CONTROL]
                + [repr(float(c[i])) for c in cols]
            )


@dataclass(frozen=True, eq=False)
class DecomposedDeltaRecord:
    """Observed (delta1, delta2) for one experiment with its noise covariance.

    ``sigma`` is symmetrized on construction; a matrix whose asymmetry exceeds
    1e-8 of its largest entry is rejected, as is one with an eigenvalue below
    -1e-10. Tiny negative eigenvalues are clipped to zero.
    """

    experiment_id: str
    delta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        delta = np.asarray(self.delta, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if delta.shape != (2,) or sigma.shape != (2, 2):
            raise DataError("delta must have length 2 and sigma shape (2, 2)")
        if not (np.isfinite(delta).all() and np.isfinite(sigma).all()):
            raise DataError(f"non-finite values in record {self.experiment_id!r}")
        object.__setattr__(self, "delta", _readonly(delta))
        object.__setattr__(self, "sigma", _readonly(clean_covariance(sigma, self.experiment_id)))

    def to_json(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "delta": [float(v) for v in self.delta],
            "sigma": [[float(v) for v in row] for row in self.sigma],
        }


def clean_covariance(sigma: np.ndarray, label: str = "") -> np.ndarray:
    """Symmetrize and validate a covariance matrix; clip round-off negatives."""
    scale = np.abs(sigma).max()
    if np.abs(sigma - sigma.T).max() > SYMMETRY_RTOL * scale:
        raise AsymmetricSigma(label)
    sym = (sigma + sigma.T) / 2
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < -PSD_EIG_TOL:
        raise NotPositiveSemidefinite(label)
    if eigvals.min() < 0:
        sym = (eigvecs * np.clip(eigvals, 0, None)) @ eigvecs.T
        sym = (sym + sym.T) / 2
    return sym


def load_decomposed_json(path: str | Path) -> list[DecomposedDeltaRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        payload = json.load(fh)
    return parse_decomposed(payload)


def parse_decomposed(payload: object) -> list[DecomposedDeltaRecord]:
    if not isinstance(payload, list):
        raise MalformedRecord(-1, "top level must be a JSON array")
    records = []
    for i, item in enumerate(payload):
        if not isinstance(item, dict) or not {"experiment_id", "delta", "sigma"} <= item.keys():
            raise MalformedRecord(i, "expected keys experiment_id, delta, sigma")
        delta, sigma = item["delta"], item["sigma"]
        try:
            delta = np.array(delta, dtype=float)
            sigma = np.array(sigma, dtype=float)
        except (TypeError, ValueError):
            raise MalformedRecord(i, "delta/sigma must be numeric") from None
        if delta.shape != (2,) or sigma.shape != (2, 2):
            raise MalformedRecord(i, "delta must have length 2 and sigma be 2x2")
        if not (np.isfinite(delta).all() and np.isfinite(sigma).all()):
            raise MalformedRecord(i, "non-finite values")
        records.append(DecomposedDeltaRecord(str(item["experiment_id"]), delta, sigma))
    return records


def write_decomposed_json(records: Iterable[DecomposedDeltaRecord], path: str | Path) -> None:
    payload = [r.to_json() for r in records]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
