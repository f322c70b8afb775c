"""Generalized pool-adjacent-violators for monotone quantile fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LossKind, LossSpec, block_minimizer, loss_value


class FitError(RuntimeError):
    """A monotone fit could not be produced."""


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous non-decreasing step function on [0, 1].

    Below the first knot the first value is used, so the function is
    defined on the whole unit interval.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if knots.size == 0 or knots.shape != values.shape:
            raise ValueError("knots and values must be nonempty and equally long")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(np.diff(values) < 0):
            raise ValueError("values must be non-decreasing")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, u):
        return eval_step(self, u)

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StepFunction":
        return cls(np.asarray(d["knots"], dtype=float), np.asarray(d["values"], dtype=float))


def _check_unit(u):
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u)) or np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("u must lie in [0, 1]")
    return u


def eval_step(f: StepFunction, u):
    """Evaluate ``f`` at ``u`` (scalar or array)."""
    u = _check_unit(u)
    idx = np.searchsorted(f.knots, u, side="right") - 1
    out = f.values[np.clip(idx, 0, len(f.values) - 1)]
    return float(out) if out.ndim == 0 else out


def fit_isotonic(us, ys, spec: LossSpec) -> StepFunction:
    """Minimize ``sum_i L(q_i, y_i)`` subject to q non-decreasing in u.

    Observations sharing the same ``u`` are tied to a common value. Poisson
    blocks whose responses are all zero produce ``-inf``; these are replaced
    after pooling by the smallest finite block value.
    """
    us = np.asarray(us, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if us.shape != ys.shape:
        raise ValueError(f"length mismatch: {us.size} inputs vs {ys.size} responses")
    if us.size == 0:
        raise ValueError("fit_isotonic needs at least one observation")
    _check_unit(us)

    order = np.argsort(us, kind="stable")
    us, ys = us[order], ys[order]
    knots, starts = np.unique(us, return_index=True)
    bounds = np.append(starts, us.size)

    # block = [first knot, end knot, first row, end row, value]
    blocks: list[list] = []
    for j in range(knots.size):
        lo, hi = int(bounds[j]), int(bounds[j + 1])
        blocks.append([j, j + 1, lo, hi, block_minimizer(spec, ys[lo:hi])])
        while len(blocks) > 1 and blocks[-2][4] > blocks[-1][4]:
            right = blocks.pop()
            left = blocks[-1]
            left[1], left[3] = right[1], right[3]
            left[4] = block_minimizer(spec, ys[left[2]:left[3]])

    values = np.empty(knots.size)
    for k0, k1, _, _, v in blocks:
        values[k0:k1] = v

    if spec.kind is LossKind.POISSON:
        finite = np.isfinite(values)
        if not finite.any():
            raise FitError("every isotonic block is -inf (all responses zero)")
        values[~finite] = values[finite].min()
        values = np.maximum.accumulate(values)
    return StepFunction(knots, values)


def isotonic_objective(f: StepFunction, us, ys, spec: LossSpec) -> float:
    return float(np.sum(loss_value(spec, eval_step(f, us), ys)))


__all__ = ["StepFunction", "FitError", "eval_step", "fit_isotonic", "isotonic_objective"]
