"""Tabular input: one CSV record per spatial unit."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .residual_space import DesignMatrix

__all__ = ["Dataset", "read_dataset", "read_coords"]

_MISSING = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True, eq=False)
class Dataset:
    ids: list
    z: np.ndarray
    x: DesignMatrix
    columns: list
    coords: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.z.size


def _read_table(path, needed):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        absent = [c for c in needed if c not in header]
        if absent:
            raise ValidationError(f"{path}: missing column(s) {absent}; header is {header}")
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return path, rows


def _numeric(path, rows, col):
    out = np.empty(len(rows))
    for k, row in enumerate(rows):
        raw = (row.get(col) or "").strip()
        if raw.lower() in _MISSING:
            raise ValidationError(f"{path}: missing value in column {col!r} at row {k} (line {k + 2})")
        try:
            v = float(raw)
        except ValueError:
            raise ValidationError(
                f"{path}: non-numeric value {raw!r} in column {col!r} at row {k} (line {k + 2})"
            ) from None
        if not math.isfinite(v):
            raise ValidationError(f"{path}: non-finite value in column {col!r} at row {k} (line {k + 2})")
        out[k] = v
    return out


def _standardize(v):
    sd = v.std(ddof=1)
    if not sd > 0:
        raise ValidationError("cannot standardise a constant coordinate column")
    return (v - v.mean()) / sd


def read_coords(path, cols=("x", "y"), standardize=False) -> np.ndarray:
    path, rows = _read_table(path, list(cols))
    c = np.column_stack([_numeric(path, rows, col) for col in cols])
    if standardize:
        c = np.column_stack([_standardize(c[:, 0]), _standardize(c[:, 1])])
    return c


def read_dataset(
    path,
    response,
    covariates=(),
    intercept=True,
    id_col=None,
    coord_cols=None,
    standardize_coords=False,
) -> Dataset:
    """Load the response and design columns.

    Coordinate columns, when given, are appended to the design after the
    named covariates (optionally standardised to mean 0 and SD 1).
    """
    covariates = list(covariates)
    coord_cols = list(coord_cols) if coord_cols else []
    needed = [response, *covariates, *coord_cols] + ([id_col] if id_col else [])
    path, rows = _read_table(path, needed)
    z = _numeric(path, rows, response)
    cols, names = [], []
    if intercept:
        cols.append(np.ones(len(rows)))
        names.append("(intercept)")
    for c in covariates:
        cols.append(_numeric(path, rows, c))
        names.append(c)
    coords = None
    if coord_cols:
        if len(coord_cols) != 2:
            raise ValidationError("exactly two coordinate columns are required")
        coords = np.column_stack([_numeric(path, rows, c) for c in coord_cols])
        if standardize_coords:
            coords = np.column_stack([_standardize(coords[:, 0]), _standardize(coords[:, 1])])
        cols.extend([coords[:, 0], coords[:, 1]])
        names.extend(coord_cols)
    x = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    ids = [row[id_col] for row in rows] if id_col else list(range(len(rows)))
    return Dataset(ids, z, DesignMatrix(x), names, coords)
