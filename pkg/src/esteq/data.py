"""Datasets: immutable row-major numeric tables with named columns.

Rows are observation vectors; an optional integer column named "sample"
carries multi-sample labels in {1..K}.
"""

from __future__ import annotations

import numpy as np

SAMPLE_COLUMN = "sample"


class Dataset:
    """Immutable collection of n observation rows.

    Parameters
    ----------
    values : (n, m) array of float64, one observation per row.
    columns : sequence of m column names (unique).
    """

    def __init__(self, values, columns=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValueError("values must be a 2-d array")
        n, m = values.shape
        if n < 1:
            raise ValueError("dataset needs at least one row")
        if not np.all(np.isfinite(values)):
            i = int(np.argwhere(~np.isfinite(values))[0][0])
            raise ValueError(f"non-finite value in row {i}")
        if columns is None:
            columns = [f"x{j}" for j in range(m)]
        columns = list(columns)
        if len(columns) != m:
            raise ValueError(f"{len(columns)} names for {m} columns")
        if len(set(columns)) != m:
            raise ValueError("duplicate column names")
        self.values = values
        self.values.setflags(write=False)
        self.columns = columns
        self._index = {name: j for j, name in enumerate(columns)}
        if SAMPLE_COLUMN in self._index:
            self._check_labels()

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def column(self, name):
        """Return one column as a read-only 1-d view."""
        return self.values[:, self.column_index(name)]

    def column_index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"no column named {name!r}; have {self.columns}") from None

    @property
    def has_labels(self):
        return SAMPLE_COLUMN in self._index

    @property
    def labels(self):
        """Integer sample labels in {1..K}; requires a 'sample' column."""
        if not self.has_labels:
            raise ValueError("dataset has no 'sample' column")
        return self.column(SAMPLE_COLUMN).astype(np.int64)

    def label_counts(self):
        """Counts n_k per label, as a dict {k: n_k} over 1..K."""
        labs = self.labels
        kmax = int(labs.max())
        counts = np.bincount(labs, minlength=kmax + 1)
        return {k: int(counts[k]) for k in range(1, kmax + 1)}

    def _check_labels(self):
        raw = self.column(SAMPLE_COLUMN)
        labs = raw.astype(np.int64)
        if np.any(labs != raw):
            raise ValueError("sample labels must be integers")
        if labs.min() < 1:
            raise ValueError("sample labels must lie in {1..K}")
        counts = np.bincount(labs)
        missing = np.nonzero(counts[1:] == 0)[0] + 1
        if missing.size:
            raise ValueError(f"empty sample group(s): {missing.tolist()}")

    def __repr__(self):
        return f"Dataset(n={self.n}, columns={self.columns})"


def load_csv(path):
    """Load a dataset from a CSV file with a header row.

    All cells are parsed as 64-bit floats; NaN or infinite values are
    rejected with the offending row index.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: empty file")
        columns = [c.strip() for c in header.split(",")]
        try:
            values = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
    if values.size == 0:
        raise ValueError(f"{path}: no data rows")
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argwhere(bad)[0][0])
        raise ValueError(f"{path}: non-finite value in data row {i}")
    return Dataset(values, columns)


def save_csv(dataset, path):
    """Inverse of load_csv, used by the simulation harness."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(dataset.columns) + "\n")
        np.savetxt(fh, dataset.values, delimiter=",", fmt="%.17g")
