"""Dataset container and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """CSV input does not follow the expected layout."""


@dataclass(frozen=True)
class Dataset:
    """Features ``X`` (n, d), group labels and responses.

    Group labels are stored as strings so that labels read from CSV and
    labels produced in memory compare equal.
    """

    features: np.ndarray
    groups: np.ndarray
    responses: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        g = np.asarray(self.groups).astype(str).ravel()
        y = np.asarray(self.responses, dtype=float).ravel()
        if not (X.shape[0] == g.size == y.size):
            raise ValueError(
                f"length mismatch: {X.shape[0]} feature rows, {g.size} groups, {y.size} responses"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        for arr in (X, g, y):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "responses", y)
        if not self.feature_names:
            names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
            object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return self.responses.size

    @property
    def group_labels(self) -> tuple:
        return tuple(sorted(set(self.groups.tolist())))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.groups[idx], self.responses[idx], self.feature_names)

    def group_indices(self) -> dict:
        return {g: np.flatnonzero(self.groups == g) for g in self.group_labels}


def read_csv(path, require_target: bool = True) -> Dataset:
    """Read a CSV with a ``group`` column, a ``target`` column and numeric features.

    With ``require_target=False`` a missing ``target`` column is allowed and
    responses are filled with zeros (prediction inputs).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        rows = [r for r in reader if r]
    if "group" not in header:
        raise SchemaError(f"{path}: missing 'group' column")
    if require_target and "target" not in header:
        raise SchemaError(f"{path}: missing 'target' column")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names")
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    gi = header.index("group")
    ti = header.index("target") if "target" in header else None
    fcols = [j for j, h in enumerate(header) if j not in (gi, ti)]
    X = np.empty((len(rows), len(fcols)))
    y = np.zeros(len(rows))
    groups = []
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        groups.append(row[gi].strip())
        try:
            X[i] = [float(row[j]) for j in fcols]
            if ti is not None:
                y[i] = float(row[ti])
        except ValueError as exc:
            raise SchemaError(f"{path}: row {i + 2}: {exc}") from None
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SchemaError(f"{path}: non-finite numeric entries")
    return Dataset(X, np.array(groups), y, tuple(header[j] for j in fcols))


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and raw rows, for commands that echo the input back."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        return header, [r for r in reader if r]
