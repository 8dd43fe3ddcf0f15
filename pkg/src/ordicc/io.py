"""CSV reading and writing for ordinal datasets.

Schema (header required)::

    subject_id,ear_id,measurement,category,x1,...,xp

``ear_id`` may be empty for single-level data. Ear labels only need to be
unique within a subject; they are paired with the subject id on reading.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import DegenerateOutcomeError, InvalidInputError
from .model_core import OrdinalDataset, canonicalize

__all__ = ["ID_COLUMNS", "SchemaError", "CsvTable", "parse_csv", "read_csv", "dataset_from_table", "format_csv",
           "write_csv"]

ID_COLUMNS = ("subject_id", "ear_id", "measurement", "category")
MAX_SHOWN = 20


class SchemaError(InvalidInputError):
    """CSV content violates the schema; ``diagnostics`` holds one line per problem."""

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        shown = self.diagnostics[:MAX_SHOWN]
        if len(self.diagnostics) > MAX_SHOWN:
            shown.append(f"... and {len(self.diagnostics) - MAX_SHOWN} more")
        super().__init__("\n".join(shown))


@dataclass(frozen=True)
class CsvTable:
    """Parsed CSV rows; ``line`` holds the 1-based file line of each row."""

    subject: list
    ear: list
    measurement: list
    category: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple
    line: list
    has_ear_column: bool


def _float(value, line, column, problems):
    try:
        out = float(value)
    except ValueError:
        problems.append(f"line {line}: column {column!r}: {value!r} is not a number")
        return math.nan
    if not math.isfinite(out):
        problems.append(f"line {line}: column {column!r}: {value!r} is not finite")
    return out


def parse_csv(text: str, covariates: Optional[Sequence[str]] = None) -> CsvTable:
    """Parse CSV text in the dataset schema.

    Parameters
    ----------
    text : str
    covariates : sequence of str, optional
        Covariate columns to keep, in order. Defaults to every column after
        ``category``.

    Raises
    ------
    SchemaError
        With every problem found, each prefixed by its line number.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(["line 1: empty file; expected header " + ",".join(ID_COLUMNS) + ",x1,..."]) from None
    problems = []
    missing = [c for c in ID_COLUMNS if c not in header]
    has_ear = "ear_id" in header
    required_missing = [c for c in missing if c != "ear_id"]
    if required_missing:
        raise SchemaError([f"line 1: header is missing column(s) {', '.join(required_missing)}"])
    if len(set(header)) != len(header):
        raise SchemaError(["line 1: duplicate column names in header"])
    extra = [h for h in header if h not in ID_COLUMNS]
    if covariates is None:
        wanted = extra
    else:
        wanted = list(covariates)
        absent = [c for c in wanted if c not in header]
        if absent:
            raise SchemaError([f"line 1: requested covariate column(s) {', '.join(absent)} not in header"])
    col = {h: i for i, h in enumerate(header)}
    subject, ear, meas, cat, cov, lines = [], [], [], [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not v.strip() for v in row):
            continue
        if len(row) != len(header):
            problems.append(f"line {line}: expected {len(header)} fields, found {len(row)}")
            continue
        row = [v.strip() for v in row]
        sid = row[col["subject_id"]]
        if not sid:
            problems.append(f"line {line}: column 'subject_id' is empty")
        raw_cat = row[col["category"]]
        try:
            k = int(raw_cat)
            if k < 1:
                raise ValueError
        except ValueError:
            problems.append(f"line {line}: column 'category': {raw_cat!r} is not a positive integer")
            k = 0
        subject.append(sid)
        ear.append(row[col["ear_id"]] if has_ear else "")
        meas.append(row[col["measurement"]])
        cat.append(k)
        cov.append([_float(row[col[c]], line, c, problems) for c in wanted])
        lines.append(line)
    if not subject and not problems:
        problems.append(f"line {max(reader.line_num, 1)}: no data rows")
    if problems:
        raise SchemaError(problems)
    return CsvTable(
        subject=subject,
        ear=ear,
        measurement=meas,
        category=np.array(cat, dtype=np.int64),
        covariates=np.array(cov, dtype=float).reshape(len(subject), len(wanted)),
        covariate_names=tuple(wanted),
        line=lines,
        has_ear_column=has_ear,
    )


def dataset_from_table(table: CsvTable, nested: bool = False, ear: Optional[str] = None) -> OrdinalDataset:
    """Build a dataset from parsed rows.

    Parameters
    ----------
    table : CsvTable
    nested : bool
        Pool ears with subject and ear random effects; every row needs an ear.
    ear : str, optional
        Keep only rows with this ``ear_id`` (single-level analysis).
    """
    keep = np.ones(len(table.subject), dtype=bool)
    if ear is not None:
        if not table.has_ear_column:
            raise SchemaError(["line 1: --ear needs an 'ear_id' column"])
        keep = np.array([e == ear for e in table.ear])
        if not keep.any():
            raise SchemaError([f"no rows with ear_id {ear!r}"])
    if nested:
        if not table.has_ear_column:
            raise SchemaError(["line 1: nested fit needs an 'ear_id' column, which is missing"])
        empty = [ln for ln, e, k in zip(table.line, table.ear, keep) if k and not e]
        if empty and len(empty) == int(keep.sum()):
            raise SchemaError(["column 'ear_id' is missing values on every row; nested fit needs one per row"])
        if empty:
            raise SchemaError([f"line {ln}: column 'ear_id' is empty; nested fit needs one per row" for ln in empty])
    idx = np.flatnonzero(keep)
    subjects = [table.subject[i] for i in idx]
    ear_ids = [(table.subject[i], table.ear[i]) for i in idx] if nested else None
    try:
        return canonicalize(
            table.category[idx],
            table.covariates[idx],
            subjects,
            ear_ids=ear_ids,
            measurement=[table.measurement[i] for i in idx],
            nesting="nested" if nested else "single",
            covariate_names=table.covariate_names,
        )
    except DegenerateOutcomeError as exc:
        raise SchemaError([f"category: {exc}"]) from exc


def read_csv(path, covariates: Optional[Sequence[str]] = None, nested: bool = False,
             ear: Optional[str] = None) -> OrdinalDataset:
    """Read a dataset CSV; see :func:`parse_csv` and :func:`dataset_from_table`."""
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    return dataset_from_table(parse_csv(text, covariates), nested=nested, ear=ear)


def _ear_part(ear):
    if isinstance(ear, tuple) and len(ear) == 2:
        return ear[1]
    return ear


def format_csv(data: OrdinalDataset) -> str:
    """Dataset as CSV text in the standard schema, categories as canonical codes."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(ID_COLUMNS) + list(data.covariate_names))
    for i in range(data.n_obs):
        ear = "" if data.ear_ids is None else _ear_part(data.ear_ids[i])
        meas = "" if data.measurement is None else data.measurement[i]
        writer.writerow([data.subject_ids[i], ear, meas, int(data.categories[i])]
                        + [repr(float(v)) for v in data.covariates[i]])
    return buf.getvalue()


def write_csv(data: OrdinalDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(format_csv(data))
