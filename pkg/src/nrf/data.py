"""Dataset loading, cleaning, splitting and synthetic generation.

All randomness goes through ``numpy.random.Generator`` seeded with PCG64
(``numpy.random.default_rng``), which produces the same streams on every
platform.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class DataError(Exception):
    """Raised when a data file cannot be turned into a valid Dataset."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    feature_names: tuple[str, ...]
    target_name: str = "y"

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.target, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, d = X.shape
        if n < 2 or d < 1:
            raise DataError(f"need n >= 2 rows and d >= 1 features, got {n}x{d}")
        if y.shape != (n,):
            raise DataError(f"target length {y.shape} does not match {n} rows")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("dataset contains non-finite entries")
        if len(self.feature_names) != d:
            raise DataError("feature_names length does not match d")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx):
        return self.features[idx], self.target[idx]


@dataclass(frozen=True)
class LoadReport:
    rows_read: int
    rows_dropped: int
    columns_dropped: tuple[str, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


def _parse_float(cell: str):
    cell = cell.strip()
    if not cell:
        return None
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, target_column: str | None = None) -> tuple[Dataset, LoadReport]:
    """Read a headed, comma-separated file into a cleaned Dataset.

    A column is numeric when a strict majority of its non-empty cells parse
    as finite floats; other columns are dropped wholesale. Afterwards every
    row with an empty or unparsable cell in a retained column is dropped.
    The target defaults to the last column.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    width = len(header)
    body = [r + [""] * (width - len(r)) if len(r) < width else r[:width] for r in body]

    if target_column is None:
        target_idx = width - 1
    elif target_column in header:
        target_idx = header.index(target_column)
    else:
        raise DataError(f"target column {target_column!r} not in header")

    parsed = [[_parse_float(c) for c in r] for r in body]
    numeric = []
    for j in range(width):
        filled = [r[j] for r in body if r[j].strip()]
        ok = sum(1 for i, r in enumerate(body) if r[j].strip() and parsed[i][j] is not None)
        numeric.append(bool(filled) and 2 * ok > len(filled))
    if not numeric[target_idx]:
        raise DataError(f"target column {header[target_idx]!r} is not numeric")

    keep = [j for j in range(width) if numeric[j] and j != target_idx]
    dropped_cols = tuple(header[j] for j in range(width) if not numeric[j])
    if not keep:
        raise DataError("no numeric feature columns")

    X, y = [], []
    for vals in parsed:
        row = [vals[j] for j in keep]
        t = vals[target_idx]
        if t is None or any(v is None for v in row):
            continue
        X.append(row)
        y.append(t)
    if len(y) < 2:
        raise DataError(f"only {len(y)} usable rows in {path}")

    report = LoadReport(len(body), len(body) - len(y), dropped_cols)
    logger.info("loaded %s: %d rows kept, %d dropped, columns dropped: %s",
                path, len(y), report.rows_dropped, list(dropped_cols))
    ds = Dataset(np.array(X), np.array(y), tuple(header[j] for j in keep), header[target_idx])
    return ds, report


def write_csv(ds: Dataset, path) -> None:
    """Write ``ds`` as a headed CSV (features then target) that ``load_csv`` reads back exactly.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(ds, path)
        return
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        _write_rows(ds, fh)


def _write_rows(ds, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(list(ds.feature_names) + [ds.target_name])
    for row, t in zip(ds.features, ds.target):
        w.writerow([repr(float(v)) for v in row] + [repr(float(t))])


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = n // 2
    n_val = n // 4
    return n_train, n_val, n - n_train - n_val


def split_dataset(ds_or_n, seed: int) -> SplitIndices:
    """Shuffle row indices with ``seed`` and cut them 50/25/25 (floor, floor, remainder)."""
    n = ds_or_n if isinstance(ds_or_n, (int, np.integer)) else ds_or_n.n
    if n < 4:
        raise DataError(f"cannot split {n} rows into three non-empty parts")
    perm = np.random.default_rng(seed).permutation(n)
    n_train, n_val, _ = split_sizes(n)
    return SplitIndices(perm[:n_train], perm[n_train:n_train + n_val],
                        perm[n_train + n_val:], int(seed))


def sine_target(X: np.ndarray) -> np.ndarray:
    return np.sin(20.0 * X - 10.0).sum(axis=1)


def synth_sine(n: int, d: int, sigma: float, seed: int) -> Dataset:
    """Uniform inputs on the unit cube with target sum_j sin(20 x_j - 10) plus N(0, sigma^2) noise."""
    # a Dataset needs two rows, so n = 1 is rejected here as well
    if n < 2 or d < 1 or sigma < 0:
        raise ValueError("need n >= 2, d >= 1, sigma >= 0")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, d))
    y = sine_target(X)
    if sigma > 0:
        y = y + rng.normal(0.0, sigma, size=n)
    return Dataset(X, y, tuple(f"x{j + 1}" for j in range(d)), "y")
