"""Canonical CSV schemas and validated ingestion.

Lineage CSV: one row per child. Identity columns are required; any subset of
the outcome columns may be present. Missing values are empty fields.

    child_id, region_id, child_birth_year, child_gender,
    edu_<rel>, logearn_<rel>, rank_<rel>     for rel in
    {child, father, mother, pgf, pgm, mgf, mgm}

Panel CSV: one row per person-year.

    person_id, region_id, gender, edu_group, birth_year, year, age,
    log_earnings, below_floor
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataValidationError
from .synthkit import RELATIVES, SCHOOLING_CODES

log = logging.getLogger(__name__)

ID_COLUMNS = ["child_id", "region_id", "child_birth_year", "child_gender"]
OUTCOME_PREFIXES = ("edu_", "logearn_", "rank_")
LINEAGE_COLUMNS = ID_COLUMNS + [f"{p}{r}" for p in OUTCOME_PREFIXES for r in RELATIVES]

PANEL_COLUMNS = ["person_id", "region_id", "gender", "edu_group", "birth_year",
                 "year", "age", "log_earnings", "below_floor"]

MAX_REPORTED_ERRORS = 50


@dataclass
class ValidationReport:
    n_rows: int = 0
    n_ok: int = 0
    errors: list = field(default_factory=list)          # (line, column, message)
    error_counts: dict = field(default_factory=dict)    # column -> count

    def add(self, line: int, column: str, message: str) -> None:
        if len(self.errors) < MAX_REPORTED_ERRORS:
            self.errors.append((line, column, message))
        self.error_counts[column] = self.error_counts.get(column, 0) + 1

    @property
    def n_errors(self) -> int:
        return sum(self.error_counts.values())

    def summary(self) -> str:
        lines = [f"rows={self.n_rows} ok={self.n_ok} errors={self.n_errors}"]
        for line, col, msg in self.errors:
            lines.append(f"  line {line}, column {col}: {msg}")
        if self.n_errors > len(self.errors):
            lines.append(f"  ... {self.n_errors - len(self.errors)} more")
        return "\n".join(lines)


def _numeric_column(df, raw, col, report):
    """Convert one column; returns (present mask, bad mask)."""
    present = raw[col] != ""
    converted = pd.to_numeric(raw[col].where(present, other=np.nan), errors="coerce")
    bad = present & converted.isna()
    for idx in raw.index[bad]:
        report.add(int(idx) + 2, col, f"not a number: {raw.at[idx, col]!r}")
    df[col] = converted.astype(float)
    return present, bad


def ingest_lineage_csv(path, *, categorical: bool = False,
                       on_error: str = "fail"):
    """Read and validate a lineage CSV.

    on_error="fail" raises on the first batch of problems; "skip" drops the
    offending rows and logs them. Returns (records, ValidationReport).
    With categorical=True, schooling values must come from the seven-value
    code set.
    """
    if on_error not in ("fail", "skip"):
        raise DataValidationError(f"unknown on_error mode {on_error!r}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    report = ValidationReport(n_rows=len(raw))

    missing = [c for c in ID_COLUMNS if c not in raw.columns]
    if missing:
        raise DataValidationError(f"{path}: missing required columns {missing}")
    unknown = [c for c in raw.columns if c not in LINEAGE_COLUMNS]
    if unknown:
        raise DataValidationError(f"{path}: unknown columns {unknown}")

    df = pd.DataFrame(index=raw.index)
    bad_rows = pd.Series(False, index=raw.index)

    df["child_id"] = raw["child_id"]
    df["region_id"] = raw["region_id"]
    for col in ("child_id", "region_id"):
        empty = raw[col] == ""
        for idx in raw.index[empty]:
            report.add(int(idx) + 2, col, "required value is empty")
        bad_rows |= empty

    present, bad = _numeric_column(df, raw, "child_birth_year", report)
    bad_rows |= bad
    whole = df["child_birth_year"].dropna() % 1 == 0
    for idx in whole.index[~whole]:
        report.add(int(idx) + 2, "child_birth_year", "not an integer year")
        bad_rows[idx] = True
    for idx in raw.index[~present]:
        report.add(int(idx) + 2, "child_birth_year", "required value is empty")
        bad_rows[idx] = True

    gender_ok = raw["child_gender"].isin(["M", "F"])
    for idx in raw.index[~gender_ok]:
        report.add(int(idx) + 2, "child_gender",
                   f"expected M or F, got {raw.at[idx, 'child_gender']!r}")
    bad_rows |= ~gender_ok
    df["child_gender"] = raw["child_gender"]

    codes = np.asarray(SCHOOLING_CODES)
    for col in LINEAGE_COLUMNS[4:]:
        if col not in raw.columns:
            continue
        _, bad = _numeric_column(df, raw, col, report)
        bad_rows |= bad
        vals = df[col]
        if col.startswith("rank_"):
            out_of_range = vals.notna() & ((vals < 0) | (vals > 1))
            for idx in vals.index[out_of_range]:
                report.add(int(idx) + 2, col, f"rank {vals[idx]} outside [0, 1]")
            bad_rows |= out_of_range
        elif col.startswith("edu_") and categorical:
            known = vals.isna() | vals.isin(codes)
            for idx in vals.index[~known]:
                report.add(int(idx) + 2, col,
                           f"schooling {vals[idx]} not in the code set")
            bad_rows |= ~known

    report.n_ok = int((~bad_rows).sum())
    if report.n_errors:
        if on_error == "fail":
            raise DataValidationError(f"{path}: validation failed\n{report.summary()}")
        log.warning("%s: skipped %d invalid rows", path, int(bad_rows.sum()))
        df = df[~bad_rows]

    df = df.reset_index(drop=True)
    df["child_birth_year"] = df["child_birth_year"].astype(np.int64)
    return df, report


def write_lineage_csv(records: pd.DataFrame, path) -> None:
    """Write records in canonical column order; internal columns are dropped."""
    cols = [c for c in LINEAGE_COLUMNS if c in records.columns]
    records[cols].to_csv(path, index=False)


def ingest_panel_csv(path, *, on_error: str = "fail"):
    """Read and validate a person-year panel CSV; returns (panel, report)."""
    if on_error not in ("fail", "skip"):
        raise DataValidationError(f"unknown on_error mode {on_error!r}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    report = ValidationReport(n_rows=len(raw))
    missing = [c for c in PANEL_COLUMNS if c not in raw.columns]
    if missing:
        raise DataValidationError(f"{path}: missing required columns {missing}")

    df = pd.DataFrame(index=raw.index)
    bad_rows = pd.Series(False, index=raw.index)
    for col in ("person_id", "region_id", "edu_group"):
        df[col] = raw[col]
        empty = raw[col] == ""
        for idx in raw.index[empty]:
            report.add(int(idx) + 2, col, "required value is empty")
        bad_rows |= empty
    gender_ok = raw["gender"].isin(["M", "F"])
    for idx in raw.index[~gender_ok]:
        report.add(int(idx) + 2, "gender", "expected M or F")
    bad_rows |= ~gender_ok
    df["gender"] = raw["gender"]

    for col in ("birth_year", "year", "age", "log_earnings"):
        present, bad = _numeric_column(df, raw, col, report)
        for idx in raw.index[~present]:
            report.add(int(idx) + 2, col, "required value is empty")
        bad_rows |= bad | ~present

    floor_ok = raw["below_floor"].isin(["0", "1", "True", "False", "true", "false"])
    for idx in raw.index[~floor_ok]:
        report.add(int(idx) + 2, "below_floor", "expected a 0/1 flag")
    bad_rows |= ~floor_ok
    df["below_floor"] = raw["below_floor"].isin(["1", "True", "true"])

    mismatch = (df["age"] - (df["year"] - df["birth_year"])).abs() > 0
    mismatch &= ~bad_rows
    for idx in df.index[mismatch]:
        report.add(int(idx) + 2, "age", "age != year - birth_year")
    bad_rows |= mismatch

    report.n_ok = int((~bad_rows).sum())
    if report.n_errors:
        if on_error == "fail":
            raise DataValidationError(f"{path}: validation failed\n{report.summary()}")
        log.warning("%s: skipped %d invalid rows", path, int(bad_rows.sum()))
        df = df[~bad_rows]
    df = df.reset_index(drop=True)
    for col in ("birth_year", "year", "age"):
        df[col] = df[col].astype(np.int64)
    return df, report


def write_panel_csv(panel: pd.DataFrame, path) -> None:
    out = panel[PANEL_COLUMNS].copy()
    out["below_floor"] = out["below_floor"].astype(int)
    out.to_csv(path, index=False)
