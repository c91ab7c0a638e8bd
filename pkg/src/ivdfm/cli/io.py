"""CSV ingestion and emission, and train-split scaling."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np


class IngestError(ValueError):
    pass


def fmt(x):
    """Lossless decimal text (17 significant digits)."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows, footer=None):
    """Header row, data rows, optional ``# footer`` comment line."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        if footer:
            fh.write(f"# {footer}\n")


def write_matrix(path, X, names=None, footer=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    names = names or [f"x{i + 1}" for i in range(X.shape[1])]
    write_csv(path, names, X.tolist(), footer)


def ingest_csv(path, has_header=True, timestamp_col=None):
    """Read a numeric CSV into ``(values (T, N), column names, timestamps or None)``.

    Lines starting with ``#`` are ignored. Locations in errors are 1-based
    data rows and columns of the file.
    """
    try:
        with open(path, newline="") as fh:
            lines = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc.strerror}") from None
    if not lines:
        raise IngestError(f"{path} is empty")
    header = lines[0] if has_header else None
    body = lines[1:] if has_header else lines
    if not body:
        raise IngestError(f"{path} has no data rows")
    width = len(header) if header else len(body[0])
    ts_idx = None
    if timestamp_col is not None:
        if isinstance(timestamp_col, str):
            if header is None or timestamp_col not in header:
                raise IngestError(f"timestamp column {timestamp_col!r} not in header")
            ts_idx = header.index(timestamp_col)
        else:
            ts_idx = int(timestamp_col)
    values, stamps = [], []
    for i, row in enumerate(body, start=1):
        if len(row) != width:
            raise IngestError(f"ragged row {i}: expected {width} fields, found {len(row)}")
        out = []
        for j, cell in enumerate(row):
            if j == ts_idx:
                stamps.append(cell)
                continue
            try:
                out.append(float(cell))
            except ValueError:
                raise IngestError(f"non-numeric cell at row {i}, column {j + 1}: {cell!r}") from None
        values.append(out)
    names = header or [f"x{j + 1}" for j in range(width)]
    if ts_idx is not None:
        names = [n for j, n in enumerate(names) if j != ts_idx]
    return np.array(values, dtype=np.float64), names, (stamps if ts_idx is not None else None)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(train):
    train = np.asarray(train, dtype=np.float64)
    if train.shape[0] < 2:
        raise ValueError("scaler needs more than one training row")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    zero = std == 0
    if np.any(zero):
        warnings.warn(f"zero-variance columns {np.flatnonzero(zero).tolist()}; std set to 1",
                      RuntimeWarning, stacklevel=2)
        std = np.where(zero, 1.0, std)
    return Scaler(mean, std)


def apply_scaler(scaler, data):
    return (np.asarray(data, dtype=np.float64) - scaler.mean) / scaler.std
