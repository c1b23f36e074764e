"""Typed tabular container shared by every other module.

A :class:`Table` is an immutable ``n x d`` float matrix plus a column schema.
Continuous columns may carry standardization stats; binary columns hold
values in ``{0, 1}`` (except relaxed base samples, see ``relaxed``).

Standard deviations use the sample convention (denominator ``n - 1``)
throughout the package.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed tables, schemas or files."""


class Kind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Provenance(str, enum.Enum):
    REAL = "real"
    BASE_SYNTHETIC = "base_synthetic"
    CORRECTED = "corrected"
    ORACLE = "oracle"


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: Kind = Kind.CONTINUOUS
    mean: float | None = None
    std: float | None = None

    def __post_init__(self) -> None:
        if self.std is not None and not self.std > 0:
            raise DataError(f"column {self.name!r}: standardization std must be > 0")

    @property
    def is_binary(self) -> bool:
        return self.kind is Kind.BINARY

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind.value, "mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(d["name"], Kind(d["kind"]), d.get("mean"), d.get("std"))


@dataclass(frozen=True)
class ColumnStats:
    """Per-column location/scale used by :func:`standardize`.

    Binary and degenerate columns get ``mean=0, std=1`` so the transform
    leaves them untouched.
    """

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


@dataclass(frozen=True)
class Table:
    schema: tuple[ColumnSchema, ...]
    rows: np.ndarray
    provenance: Provenance = Provenance.REAL
    relaxed: bool = False

    def __post_init__(self) -> None:
        rows = np.array(self.rows, dtype=float, copy=True)
        if rows.ndim != 2:
            raise DataError("rows must be a 2-d matrix")
        if rows.shape[1] != len(self.schema):
            raise DataError(
                f"schema/width mismatch: {len(self.schema)} columns declared, rows have {rows.shape[1]}"
            )
        rows.setflags(write=False)
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "rows", rows)
        if self.relaxed and self.provenance is not Provenance.BASE_SYNTHETIC:
            raise DataError("only base-synthetic tables may carry relaxed binary values")

    @classmethod
    def from_array(
        cls,
        rows: np.ndarray,
        names: Sequence[str] | None = None,
        kinds: Sequence[Kind] | None = None,
        provenance: Provenance = Provenance.REAL,
    ) -> "Table":
        rows = np.asarray(rows, dtype=float)
        d = rows.shape[1]
        names = list(names) if names is not None else [f"x{j}" for j in range(d)]
        if kinds is None:
            kinds = [infer_kind(rows[:, j]) for j in range(d)]
        return cls(tuple(ColumnSchema(n, Kind(k)) for n, k in zip(names, kinds)), rows, provenance)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    @property
    def binary_mask(self) -> np.ndarray:
        return np.array([c.is_binary for c in self.schema], dtype=bool)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.index(name)]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def with_rows(self, rows: np.ndarray, provenance: Provenance | None = None) -> "Table":
        return Table(self.schema, rows, provenance or self.provenance, relaxed=False)

    def take(self, idx: np.ndarray) -> "Table":
        return replace(self, rows=self.rows[idx])


@dataclass
class ValidationReport:
    kinds: list[Kind]
    nan_counts: list[int]
    degenerate: list[bool]
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


def infer_kind(col: np.ndarray) -> Kind:
    return Kind.BINARY if np.all((col == 0.0) | (col == 1.0)) else Kind.CONTINUOUS


def validate_table(table: Table) -> ValidationReport:
    rows = table.rows
    if rows.shape[0] == 0:
        raise DataError("no rows")
    nan_counts = [int(np.count_nonzero(~np.isfinite(rows[:, j]))) for j in range(table.d)]
    if any(nan_counts):
        bad = [table.names[j] for j, c in enumerate(nan_counts) if c]
        raise DataError(f"NaN/Inf entries in columns {bad}")
    kinds = [infer_kind(rows[:, j]) for j in range(table.d)]
    degenerate = [bool(np.all(rows[:, j] == rows[0, j])) for j in range(table.d)]
    issues = []
    for col, inferred in zip(table.schema, kinds):
        if col.is_binary and inferred is not Kind.BINARY and not table.relaxed:
            issues.append(f"column {col.name!r} declared binary but has values outside {{0,1}}")
    if issues:
        raise DataError("; ".join(issues))
    return ValidationReport(kinds, nan_counts, degenerate)


def column_stats(table: Table, passthrough_degenerate: bool = False) -> ColumnStats:
    rows = table.rows
    mean = np.zeros(table.d)
    std = np.ones(table.d)
    for j, col in enumerate(table.schema):
        if col.is_binary:
            continue
        s = rows[:, j].std(ddof=1) if table.n > 1 else 0.0
        if not s > 0:
            if passthrough_degenerate:
                continue
            raise DataError(f"degenerate continuous column {col.name!r} cannot be standardized")
        mean[j] = rows[:, j].mean()
        std[j] = s
    return ColumnStats(mean, std)


def standardize(
    table: Table, stats: ColumnStats | None = None, passthrough_degenerate: bool = False
) -> tuple[Table, ColumnStats]:
    """Standardize continuous columns to sample mean 0 / sample std 1.

    If ``stats`` is given it is applied as-is (used to map synthetic samples
    into the real-data space).
    """
    if stats is None:
        stats = column_stats(table, passthrough_degenerate)
    schema = tuple(
        col if col.is_binary else replace(col, mean=float(stats.mean[j]), std=float(stats.std[j]))
        for j, col in enumerate(table.schema)
    )
    return Table(schema, stats.transform(table.rows), table.provenance, table.relaxed), stats


def destandardize(table: Table, stats: ColumnStats) -> Table:
    schema = tuple(replace(c, mean=None, std=None) for c in table.schema)
    return Table(schema, stats.inverse(table.rows), table.provenance, table.relaxed)


def schema_hash(schema: Iterable[ColumnSchema]) -> str:
    """Hash of column names and kinds (standardization stats excluded)."""
    payload = json.dumps([[c.name, c.kind.value] for c in schema])
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# --- CSV / schema sidecar -------------------------------------------------

SIDECAR_VERSION = 1


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".schema.json")


def write_schema(schema: Sequence[ColumnSchema], path: str | Path, **extra) -> None:
    doc = {"version": SIDECAR_VERSION, "columns": [c.to_dict() for c in schema], **extra}
    Path(path).write_text(json.dumps(doc, indent=2))


def read_schema(path: str | Path) -> tuple[ColumnSchema, ...]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != SIDECAR_VERSION:
        raise DataError(f"unsupported schema sidecar version {doc.get('version')!r}")
    return tuple(ColumnSchema.from_dict(c) for c in doc["columns"])


def write_csv(table: Table, path: str | Path, sidecar: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(table.names)
        for row in table.rows:
            w.writerow([format(v, ".16e") for v in row])
    if sidecar:
        write_schema(table.schema, sidecar_path(path), provenance=table.provenance.value,
                     relaxed=table.relaxed)


def read_csv(
    path: str | Path,
    schema: Sequence[ColumnSchema] | None = None,
    provenance: Provenance = Provenance.REAL,
    relaxed: bool = False,
    categorical: Sequence[str] = (),
) -> Table:
    """Read a CSV with a header row.

    Column kinds come from ``schema``, else from a ``.schema.json`` sidecar
    next to the file, else are inferred. Columns listed in ``categorical``
    are one-hot encoded into binary ``name=value`` indicator columns.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        records = list(csv.reader(fh))
    records = [r for r in records if r]
    if len(records) < 2:
        raise DataError("no rows")
    header, body = records[0], records[1:]
    width = len(header)
    for lineno, r in enumerate(body, start=2):
        if len(r) != width:
            raise DataError(f"line {lineno}: expected {width} fields, got {len(r)}")

    if categorical:
        header, body = _one_hot(header, body, categorical)

    try:
        rows = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise DataError(f"malformed numeric value: {exc}") from None

    if schema is None and sidecar_path(path).exists():
        schema = read_schema(sidecar_path(path))
    if schema is not None:
        schema = tuple(schema)
        if [c.name for c in schema] != header:
            raise DataError(f"schema mismatch: header {header} vs schema {[c.name for c in schema]}")
    else:
        schema = tuple(ColumnSchema(name, infer_kind(rows[:, j])) for j, name in enumerate(header))
    table = Table(schema, rows, provenance, relaxed)
    validate_table(table)
    return table


def _one_hot(header: list[str], body: list[list[str]], categorical: Sequence[str]):
    missing = [c for c in categorical if c not in header]
    if missing:
        raise DataError(f"unknown categorical columns {missing}")
    new_header: list[str] = []
    plan = []
    for j, name in enumerate(header):
        if name in categorical:
            levels = sorted({r[j] for r in body})
            new_header += [f"{name}={lv}" for lv in levels]
            plan.append((j, levels))
        else:
            new_header.append(name)
            plan.append((j, None))
    new_body = []
    for r in body:
        out: list[str] = []
        for j, levels in plan:
            if levels is None:
                out.append(r[j])
            else:
                out += ["1" if r[j] == lv else "0" for lv in levels]
        new_body.append(out)
    return new_header, new_body


def decode_one_hot(table: Table, prefix: str) -> list[str]:
    """Map the ``prefix=level`` indicator block back to level labels (argmax)."""
    cols = [j for j, n in enumerate(table.names) if n.startswith(prefix + "=")]
    if not cols:
        raise DataError(f"no one-hot columns for {prefix!r}")
    levels = [table.names[j].split("=", 1)[1] for j in cols]
    return [levels[k] for k in np.argmax(table.rows[:, cols], axis=1)]
