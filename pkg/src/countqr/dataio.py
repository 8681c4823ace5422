"""CSV ingestion, covariate standardization and descriptive summaries."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .mixture.model import Dataset


@dataclass
class Standardization:
    means: np.ndarray
    sds: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardization":
        X = np.asarray(X, dtype=float)
        sds = X.std(axis=0, ddof=1)
        if np.any(sds <= 0):
            raise DataError("cannot standardize a constant covariate")
        return cls(X.mean(axis=0), sds)

    @classmethod
    def identity(cls, p: int) -> "Standardization":
        return cls(np.zeros(p), np.ones(p))

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.means) / self.sds

    def invert(self, Z, j: int | None = None) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if j is None:
            return Z * self.sds + self.means
        return Z * self.sds[j] + self.means[j]

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "sds": self.sds.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardization":
        return cls(np.array(d["means"], dtype=float), np.array(d["sds"], dtype=float))


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {line}: column {column!r} has non-numeric value {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {line}: column {column!r} is not finite")
    return v


def ingest_csv(path, response: str = "y", covariates=None, exclude_rows=()) -> Dataset:
    """Read a header-row CSV into a Dataset.

    Row numbers in messages and in ``exclude_rows`` count data rows from 1
    (the header is row 0).  Covariates default to every other column.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path}: {exc}") from exc
        if response not in header:
            raise DataError(f"{path}: response column {response!r} not found")
        covs = [c for c in header if c != response] if covariates is None else list(covariates)
        missing = [c for c in covs if c not in header]
        if missing:
            raise DataError(f"{path}: covariate column(s) not found: {missing}")
        if not covs:
            raise DataError(f"{path}: no covariate columns")
        iy, ix = header.index(response), [header.index(c) for c in covs]
        skip = set(exclude_rows)
        ys, xs = [], []
        try:
            for line, row in enumerate(reader, start=1):
                if not row or line in skip:
                    continue
                if len(row) != len(header):
                    raise DataError(f"row {line}: expected {len(header)} fields, found {len(row)}")
                y = _parse_float(row[iy], line, response)
                if y < 0 or y != round(y):
                    raise DataError(f"row {line}: response {row[iy]!r} is not a nonnegative integer count")
                ys.append(int(round(y)))
                xs.append([_parse_float(row[i], line, c) for i, c in zip(ix, covs)])
        except csv.Error as exc:
            raise DataError(f"{path}: {exc}") from exc
    if len(ys) < 2:
        raise DataError(f"{path}: fewer than two usable rows")
    return Dataset(np.array(ys), np.array(xs, dtype=float), covs, response)


def write_dataset_csv(path, data: Dataset) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([data.response_name, *data.column_names])
        for y, x in zip(data.y, data.X):
            w.writerow([int(y), *(f"{v:.17g}" for v in x)])


def summary_table(data: Dataset) -> list[tuple[str, float, float]]:
    """(variable, mean, sd) for the response and each covariate."""
    rows = [(data.response_name, float(data.y.mean()), float(data.y.std(ddof=1)))]
    for j, name in enumerate(data.column_names):
        col = data.X[:, j]
        rows.append((name, float(col.mean()), float(col.std(ddof=1))))
    return rows


def format_summary(rows) -> str:
    width = max(8, *(len(r[0]) for r in rows))
    lines = [f"{'Variable':<{width}}  {'Mean':>10}  {'SD':>10}"]
    lines += [f"{name:<{width}}  {m:>10.3f}  {s:>10.3f}" for name, m, s in rows]
    return "\n".join(lines)
