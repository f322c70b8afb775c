"""Loss families, their subgradients and weighted block minimizers.

Every function here is vectorized over ``q`` and ``y`` (numpy broadcasting);
scalars go in, scalars come out.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

CE_EPS = 1e-6
HUBER_MAX_ITER = 200


class DomainError(ValueError):
    """Input outside the domain of a loss."""


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    ABSOLUTE = "absolute"
    PINBALL = "pinball"
    HUBER = "huber"
    POISSON = "poisson"
    CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class LossSpec:
    """A loss family together with its parameters.

    ``tau`` is set only for pinball loss and ``m`` only for Huber loss.
    """

    kind: LossKind
    tau: Optional[float] = None
    m: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.kind is LossKind.PINBALL:
            if self.tau is None or not 0.0 < self.tau < 1.0:
                raise ValueError(f"pinball loss needs 0 < tau < 1, got {self.tau}")
        elif self.tau is not None:
            raise ValueError(f"tau is only valid for pinball loss, not {self.kind.value}")
        if self.kind is LossKind.HUBER:
            if self.m is None or not self.m > 0.0:
                raise ValueError(f"huber loss needs m > 0, got {self.m}")
        elif self.m is not None:
            raise ValueError(f"m is only valid for huber loss, not {self.kind.value}")

    @classmethod
    def squared(cls) -> "LossSpec":
        return cls(LossKind.SQUARED)

    @classmethod
    def absolute(cls) -> "LossSpec":
        return cls(LossKind.ABSOLUTE)

    @classmethod
    def pinball(cls, tau: float) -> "LossSpec":
        return cls(LossKind.PINBALL, tau=tau)

    @classmethod
    def huber(cls, m: float) -> "LossSpec":
        return cls(LossKind.HUBER, m=m)

    @classmethod
    def poisson(cls) -> "LossSpec":
        return cls(LossKind.POISSON)

    @classmethod
    def cross_entropy(cls) -> "LossSpec":
        return cls(LossKind.CROSS_ENTROPY)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.tau is not None:
            out["tau"] = float(self.tau)
        if self.m is not None:
            out["m"] = float(self.m)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        if not isinstance(d, dict):
            raise ValueError("loss spec must be a JSON object")
        unknown = set(d) - {"kind", "tau", "m"}
        if unknown:
            raise ValueError(f"unknown loss keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ValueError("loss spec is missing 'kind'")
        try:
            kind = LossKind(d["kind"])
        except ValueError:
            raise ValueError(f"unknown loss kind {d['kind']!r}") from None
        return cls(kind, tau=d.get("tau"), m=d.get("m"))


def _check_ce(q):
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise DomainError("cross-entropy prediction must lie in (0, 1)")


def loss_value(spec: LossSpec, q, y):
    """Loss of prediction ``q`` against response ``y``."""
    q = np.asarray(q, dtype=float)
    y = np.asarray(y, dtype=float)
    kind = spec.kind
    if kind is LossKind.SQUARED:
        out = (y - q) ** 2
    elif kind is LossKind.ABSOLUTE:
        out = np.abs(y - q)
    elif kind is LossKind.PINBALL:
        r = y - q
        out = np.where(r >= 0, spec.tau * r, (spec.tau - 1.0) * r)
    elif kind is LossKind.HUBER:
        a = np.abs(y - q)
        out = np.where(a <= spec.m, 0.5 * a**2, spec.m * a - 0.5 * spec.m**2)
    elif kind is LossKind.POISSON:
        out = np.exp(q) - y * q
    else:
        _check_ce(q)
        out = -(y * np.log(q) + (1.0 - y) * np.log1p(-q))
    return out[()] if out.ndim == 0 else out


def huber_psi(r, m: float):
    return np.clip(r, -m, m)


def loss_subgrad(spec: LossSpec, q, y):
    """An element of the subdifferential of the loss in ``q``.

    At the kink of pinball/absolute loss the midpoint of the
    subdifferential interval is returned.
    """
    q = np.asarray(q, dtype=float)
    y = np.asarray(y, dtype=float)
    kind = spec.kind
    if kind is LossKind.SQUARED:
        out = 2.0 * (q - y)
    elif kind is LossKind.ABSOLUTE:
        out = np.sign(q - y)
    elif kind is LossKind.PINBALL:
        r = y - q
        out = np.where(r > 0, -spec.tau, np.where(r < 0, 1.0 - spec.tau, 0.5 - spec.tau))
    elif kind is LossKind.HUBER:
        out = -huber_psi(y - q, spec.m)
    elif kind is LossKind.POISSON:
        out = np.exp(q) - y
    else:
        _check_ce(q)
        out = (q - y) / (q * (1.0 - q))
    out = np.asarray(out, dtype=float)
    return out[()] if out.ndim == 0 else out


def weighted_quantile_lower(ys, ws, tau: float) -> float:
    """Smallest y whose cumulative weight reaches ``tau`` times the total."""
    order = np.argsort(ys, kind="stable")
    ys = ys[order]
    cw = np.cumsum(ws[order])
    target = tau * cw[-1]
    # relative slack absorbs rounding in the cumulative sum
    idx = int(np.searchsorted(cw, target * (1.0 - 1e-12), side="left"))
    return float(ys[min(idx, len(ys) - 1)])


def _huber_location(ys, ws, m: float) -> float:
    total = float(ws.sum())
    tol = 1e-10 * total

    def score(q):
        return float(np.dot(ws, huber_psi(ys - q, m)))

    lo, hi = float(ys.min()), float(ys.max())
    if lo == hi:
        return lo
    q = float(np.dot(ws, ys) / total)
    for _ in range(HUBER_MAX_ITER):
        g = score(q)
        if abs(g) <= tol:
            return q
        if g > 0:
            lo = max(lo, q)
        else:
            hi = min(hi, q)
        slope = float(ws[np.abs(ys - q) <= m].sum())
        step = q + g / slope if slope > 0 else np.nan
        # fall back to the bracket midpoint when Newton leaves the bracket
        q = step if lo < step < hi else 0.5 * (lo + hi)
    while hi - lo > 1e-15 * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        g = score(mid)
        if abs(g) <= tol:
            return mid
        if g > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def block_minimizer(spec: LossSpec, ys, ws=None) -> float:
    """Constant minimizing the weighted loss ``sum_i w_i L(q, y_i)``.

    Returns ``-inf`` for Poisson loss when every response is zero; callers
    are expected to replace that sentinel.
    """
    ys = np.asarray(ys, dtype=float).ravel()
    if ys.size == 0:
        raise ValueError("block_minimizer needs at least one observation")
    ws = np.ones_like(ys) if ws is None else np.asarray(ws, dtype=float).ravel()
    if ws.shape != ys.shape:
        raise ValueError("ys and ws must have the same length")
    if np.any(ws <= 0):
        raise ValueError("weights must be positive")
    kind = spec.kind
    if kind is LossKind.SQUARED:
        return float(np.dot(ws, ys) / ws.sum())
    if kind is LossKind.ABSOLUTE:
        return weighted_quantile_lower(ys, ws, 0.5)
    if kind is LossKind.PINBALL:
        return weighted_quantile_lower(ys, ws, spec.tau)
    if kind is LossKind.HUBER:
        return _huber_location(ys, ws, spec.m)
    mean = float(np.dot(ws, ys) / ws.sum())
    if kind is LossKind.POISSON:
        return math.log(mean) if mean > 0 else -math.inf
    return min(max(mean, CE_EPS), 1.0 - CE_EPS)
