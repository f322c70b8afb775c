"""Risk and Kolmogorov-Smirnov parity metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .data import Dataset
from .losses import LossSpec, loss_value


@dataclass(frozen=True)
class MetricsReport:
    risk: float
    ks: float
    n: int
    per_group_risk: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "risk": float(self.risk),
            "ks": float(self.ks),
            "per_group_risk": {g: float(v) for g, v in sorted(self.per_group_risk.items())},
            "n": int(self.n),
        }


def _ks_two(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    t = np.concatenate([a, b])
    fa = np.searchsorted(a, t, side="right") / a.size
    fb = np.searchsorted(b, t, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_distance(values, groups) -> float:
    """Largest gap between group-wise empirical CDFs of ``values``.

    With more than two groups the maximum over all pairs is returned.
    """
    values = np.asarray(values, dtype=float).ravel()
    groups = np.asarray(groups).astype(str).ravel()
    if values.shape != groups.shape:
        raise ValueError("values and groups must have the same length")
    labels = sorted(set(groups.tolist()))
    if len(labels) < 2:
        raise ValueError("KS parity distance needs at least two groups")
    samples = [values[groups == g] for g in labels]
    return max(_ks_two(a, b) for a, b in combinations(samples, 2))


def evaluate(model, data: Dataset, spec: LossSpec) -> MetricsReport:
    """Risk and parity of ``model`` (anything with ``predict(X, groups)``) on ``data``."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = model.predict(data.features, data.groups)
    return report_from_predictions(preds, data, spec)


def report_from_predictions(preds, data: Dataset, spec: LossSpec) -> MetricsReport:
    losses = loss_value(spec, preds, data.responses)
    per_group = {g: float(np.mean(losses[idx])) for g, idx in data.group_indices().items()}
    ks = ks_distance(preds, data.groups) if len(per_group) >= 2 else 0.0
    return MetricsReport(float(np.mean(losses)), ks, len(data), per_group)
