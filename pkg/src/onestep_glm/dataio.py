"""CSV datasets: loading with validation, writing, and a synthetic airline surrogate.

Files are UTF-8, comma separated, with a header row and '.' as decimal
point.  Floats are written with ``repr`` so a write/read cycle returns the
same values bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, GlmError
from .glm import DataShard, Family
from .sharding import make_rng


class DataParseError(GlmError, ValueError):
    """A cell, row or header of a CSV file could not be used.

    ``line`` is the 1-based line number in the file (the header is line 1).
    """

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


class UnknownColumnError(ConfigurationError):
    """A referenced column is missing from the header."""


@dataclass(frozen=True)
class CsvDataset:
    """Response and covariates read from a CSV file.

    ``columns`` names the columns of ``X`` in order, starting with
    ``"(Intercept)"`` when one was added.
    """

    y: np.ndarray
    X: np.ndarray
    columns: tuple
    response: str
    path: str = ""

    @property
    def shard(self) -> DataShard:
        return DataShard(self.y, self.X)

    def index_of(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise UnknownColumnError(f"unknown column {name!r}; model columns are {list(self.columns)}") from None


def read_table(path: str):
    """Header and rows of a CSV file as strings."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataParseError(f"{path}: empty file, header row required", line=1) from None
            rows = list(reader)
    except UnicodeDecodeError as exc:
        raise DataParseError(f"{path}: not valid UTF-8 ({exc})") from None
    if len(set(header)) != len(header):
        raise DataParseError(f"{path}: duplicate column names in header", line=1)
    return header, rows


def load_csv(path: str, response: str, covariates: Optional[Sequence[str]] = None,
             add_intercept: bool = False, family=None) -> CsvDataset:
    """Read a model frame from ``path``.

    ``covariates`` defaults to every column except the response.  With a
    logistic ``family`` every response cell must be 0 or 1.

    Raises
    ------
    UnknownColumnError
        A referenced column is absent.
    DataParseError
        A cell is not a finite real, a row has the wrong width, or a
        logistic response is outside {0, 1}.  The message names the line.
    """
    header, rows = read_table(path)
    if covariates is None:
        covariates = [h for h in header if h != response]
    covariates = list(covariates)
    for name in [response, *covariates]:
        if name not in header:
            raise UnknownColumnError(f"{path}: column {name!r} not in header {header}")
    if not rows:
        raise DataParseError(f"{path}: no data rows", line=2)
    pos = [header.index(c) for c in [response, *covariates]]
    family = None if family is None else Family.parse(family)
    values = np.empty((len(rows), len(pos)))
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise DataParseError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}", line=line)
        for j, p in enumerate(pos):
            cell = row[p].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataParseError(f"{path}: line {line}, column {header[p]!r}: {cell!r} is not a number",
                                     line=line) from None
            if not math.isfinite(v):
                raise DataParseError(f"{path}: line {line}, column {header[p]!r}: non-finite value {cell!r}",
                                     line=line)
            values[i, j] = v
        if family is Family.LOGISTIC and values[i, 0] not in (0.0, 1.0):
            raise DataParseError(f"{path}: line {line}: logistic response {response!r} must be 0 or 1, "
                                 f"got {row[pos[0]].strip()!r}", line=line)
        if family is Family.POISSON and (values[i, 0] < 0 or values[i, 0] != math.floor(values[i, 0])):
            raise DataParseError(f"{path}: line {line}: Poisson response {response!r} must be a "
                                 f"nonnegative integer, got {row[pos[0]].strip()!r}", line=line)
    y = values[:, 0].copy()
    X = values[:, 1:]
    names = list(covariates)
    if add_intercept:
        X = np.column_stack([np.ones(len(rows)), X])
        names = ["(Intercept)", *names]
    if X.shape[1] == 0:
        raise ConfigurationError("the model has no covariates")
    return CsvDataset(y, np.ascontiguousarray(X), tuple(names), response, str(path))


def write_csv(path: str, columns: Sequence[str], data) -> None:
    """Write a 2-D array under ``columns``; floats keep their exact value."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ValueError("data must be 2-D with one column per name")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


# ------------------------------------------------------------ airline surrogate

AIRLINE_COLUMNS = ("Year", "Delayed", "DepTime", "CRSArrTime", "ActualElapsedTime", "Distance")
AIRLINE_COVARIATES = ("DepTime", "CRSArrTime", "ActualElapsedTime", "Distance")
AIRLINE_YEARS = (1987, 2007)


def synthetic_airline(n_rows: int, seed: int = 0) -> np.ndarray:
    """SYNTHETIC stand-in for the flight delay data, sorted by ``Year``.

    Columns follow :data:`AIRLINE_COLUMNS`.  Covariate scales roughly match
    the real file's summary statistics; elapsed time drifts upward and the
    delay rate drifts downward over the years, so blocks of consecutive
    years are not exchangeable.  No real records are involved.
    """
    if n_rows < 1:
        raise ValueError("n_rows must be positive")
    rng = make_rng(seed)
    lo, hi = AIRLINE_YEARS
    year = np.sort(rng.integers(lo, hi + 1, size=n_rows))
    t = (year - lo) / (hi - lo)  # 0..1
    dep = np.clip(np.round(rng.normal(1350.0, 477.0, n_rows)), 1, 2400)
    arr = np.clip(np.round(rng.normal(1491.0, 494.0, n_rows)), 1, 2400)
    dist = np.round(np.clip(rng.lognormal(6.3, 0.7, n_rows), 30, 5000))
    elapsed = np.round(np.clip(20.0 + 0.12 * dist + 25.0 * t + rng.normal(0, 12.0, n_rows), 15, 700))
    eta = (-2.95 + 0.00096 * dep - 0.00028 * arr + 0.058 * elapsed - 0.00683 * dist
           + 0.8 * (0.5 - t))  # year drift the covariates do not explain
    delayed = (rng.random(n_rows) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return np.column_stack([year, delayed, dep, arr, elapsed, dist]).astype(float)


def write_synthetic_airline(path: str, n_rows: int, seed: int = 0) -> None:
    write_csv(path, AIRLINE_COLUMNS, synthetic_airline(n_rows, seed))
