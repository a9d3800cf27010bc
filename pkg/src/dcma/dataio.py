"""CSV reading/writing for observed datasets.

Dialect: comma separated, header row required, UTF-8, ``.`` decimal point.
A non-numeric cell aborts immediately; missing cells are collected and
reported together. Nothing is imputed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .genmodel import Dataset

MISSING = {"", "na", "nan", "null", "none"}


def read_csv_dataset(path, treatment: str, mediators, outcome: str, covariates=()) -> Dataset:
    path = Path(path)
    mediators, covariates = list(mediators), list(covariates)
    roles = [treatment, outcome, *mediators, *covariates]
    if len(set(roles)) != len(roles):
        raise ConfigError("columns: treatment, outcome, mediator and covariate roles must be disjoint")
    if not mediators:
        raise ConfigError("columns.mediators: at least one mediator column is required")
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        absent = [c for c in roles if c not in header]
        if absent:
            raise ConfigError(f"columns: {absent} not found in CSV header {header}")
        pos = [header.index(c) for c in roles]
        rows, lines_of, missing = [], [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, found {len(rec)}")
            vals = []
            for col, j in zip(roles, pos):
                cell = rec[j].strip()
                if cell.lower() in MISSING:
                    vals.append(np.nan)
                    missing.append((line_no, col))
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{line_no}: column {col!r} has non-numeric value {cell!r}") from None
                if not np.isfinite(v):
                    raise DataError(f"{path}:{line_no}: column {col!r} has non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
            lines_of.append(line_no)
    if not rows:
        raise DataError(f"{path}: empty dataset")
    if missing:
        lines = sorted({ln for ln, _ in missing})
        shown = ", ".join(str(x) for x in lines[:20]) + (" ..." if len(lines) > 20 else "")
        raise DataError(f"{path}: missing values on {len(lines)} row(s) (file lines {shown})")
    arr = np.asarray(rows, dtype=np.float64)
    a = arr[:, 0]
    bad = np.flatnonzero((a != 0.0) & (a != 1.0))
    if bad.size:
        raise DataError(f"{path}: treatment column {treatment!r} must be 0/1; "
                        f"invalid value {a[bad[0]]:g} on file line {lines_of[bad[0]]}")
    k = len(mediators)
    return Dataset(a, arr[:, 2 + k:], arr[:, 2 : 2 + k], arr[:, 1],
                   treatment, tuple(covariates), tuple(mediators), outcome)


def write_csv_dataset(path, data: Dataset) -> None:
    header = [data.a_name, *data.z_names, *data.m_names, data.y_name]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            w.writerow([repr(float(data.a[i])), *(repr(float(v)) for v in data.z[i]),
                        *(repr(float(v)) for v in data.m[i]), repr(float(data.y[i]))])
