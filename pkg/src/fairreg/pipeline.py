"""Two-step fair regression: group-wise fit, rank transform, shared monotone fit.

The fair predictor is ``Q(F_s(f(x, s)))`` where ``f`` is the group-wise base
model, ``F_s`` the empirical CDF of the base predictions of group ``s`` on the
calibration sample and ``Q`` a single non-decreasing function fitted on the
pooled ranks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .base_learners import GroupModels, fit_groupwise, fit_linear
from .data import Dataset
from .isotonic import StepFunction, eval_step, fit_isotonic
from .losses import CE_EPS, LossKind, LossSpec, loss_value
from .metrics import ks_distance
from .splines import ConfigurationError, SplineBasisConfig, SplineFit, eval_spline, fit_ispline

log = logging.getLogger(__name__)

MODEL_VERSION = 1

MonotoneFit = Union[StepFunction, SplineFit]


class CVError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitMode:
    """``reuse``: one sample for both steps; ``split``: per-group random split.

    Under ``split`` a ``fraction`` of every group goes to the base fit and
    the rest defines the empirical CDFs and the quantile fit.
    """

    kind: str = "reuse"
    fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("reuse", "split"):
            raise ValueError(f"unknown split mode {self.kind!r}")
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("split fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "SplitMode":
        if not d:
            return cls()
        unknown = set(d) - {"mode", "fraction", "seed"}
        if unknown:
            raise ValueError(f"unknown split keys: {sorted(unknown)}")
        return cls(d.get("mode", "reuse"), float(d.get("fraction", 0.5)), int(d.get("seed", 0)))


REUSE = SplitMode()


@dataclass(frozen=True)
class CVConfig:
    folds: int = 5
    degrees: tuple = tuple(range(1, 11))
    knot_counts: tuple = tuple(range(0, 11))
    ks_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "degrees", tuple(sorted(set(int(d) for d in self.degrees))))
        object.__setattr__(self, "knot_counts", tuple(sorted(set(int(k) for k in self.knot_counts))))
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if not self.degrees or not self.knot_counts:
            raise ValueError("CV grids must be nonempty")
        if not 0.0 < self.ks_fraction <= 1.0:
            raise ValueError("ks_fraction must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "CVConfig":
        unknown = set(d) - {"folds", "degrees", "knot_counts", "ks_fraction", "seed"}
        if unknown:
            raise ValueError(f"unknown cv keys: {sorted(unknown)}")
        base = cls()
        return cls(
            int(d.get("folds", base.folds)),
            tuple(d.get("degrees", base.degrees)),
            tuple(d.get("knot_counts", base.knot_counts)),
            float(d.get("ks_fraction", base.ks_fraction)),
            int(d.get("seed", base.seed)),
        )


@dataclass(frozen=True)
class QClassConfig:
    solver: str = "isotonic"
    spline: Optional[SplineBasisConfig] = None
    cv: Optional[CVConfig] = None

    def __post_init__(self):
        if self.solver == "isotonic":
            if self.spline is not None or self.cv is not None:
                raise ValueError("the isotonic solver takes no spline or cv settings")
        elif self.solver == "ispline":
            if (self.spline is None) == (self.cv is None):
                raise ValueError("the ispline solver needs exactly one of spline or cv")
        else:
            raise ValueError(f"unknown solver {self.solver!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "QClassConfig":
        unknown = set(d) - {"solver", "spline", "cv"}
        if unknown:
            raise ValueError(f"unknown qclass keys: {sorted(unknown)}")
        spline = d.get("spline")
        if spline is not None:
            spline = SplineBasisConfig(int(spline["degree"]), int(spline["interior_knots"]))
        cv = d.get("cv")
        if cv is not None:
            cv = CVConfig.from_dict(cv)
        return cls(d.get("solver", "isotonic"), spline, cv)


def ecdf_value(sorted_preds, v):
    """Fraction of ``sorted_preds`` that are ``<= v``."""
    sorted_preds = np.asarray(sorted_preds, dtype=float)
    if sorted_preds.size == 0:
        raise ValueError("empirical CDF of an empty sample")
    out = np.searchsorted(sorted_preds, v, side="right") / sorted_preds.size
    return float(out) if np.ndim(out) == 0 else out


def eval_monotone(q: MonotoneFit, u):
    if isinstance(q, StepFunction):
        return eval_step(q, u)
    return eval_spline(q, u)


def fit_monotone(us, ys, spec: LossSpec, qcfg_or_spline) -> MonotoneFit:
    if qcfg_or_spline is None:
        return fit_isotonic(us, ys, spec)
    return fit_ispline(us, ys, spec, qcfg_or_spline)


@dataclass(frozen=True)
class FairModel:
    base: GroupModels
    cdf_samples: dict
    quantile: MonotoneFit
    loss: LossSpec
    groups: tuple = field(init=False)

    def __post_init__(self):
        samples = {str(g): np.sort(np.asarray(v, dtype=float)) for g, v in self.cdf_samples.items()}
        if set(samples) != set(self.base.groups):
            raise ValueError("base models and CDF samples cover different groups")
        for v in samples.values():
            v.setflags(write=False)
        object.__setattr__(self, "cdf_samples", samples)
        object.__setattr__(self, "groups", tuple(sorted(samples)))

    def ranks(self, base_preds, groups) -> np.ndarray:
        return rank_transform(self.cdf_samples, base_preds, groups)

    def predict_from_base(self, base_preds, groups) -> np.ndarray:
        out = eval_monotone(self.quantile, self.ranks(base_preds, groups))
        if self.loss.kind is LossKind.CROSS_ENTROPY:
            out = np.clip(out, CE_EPS, 1.0 - CE_EPS)
        return np.asarray(out, dtype=float)

    def predict(self, X, groups) -> np.ndarray:
        groups = np.asarray(groups).astype(str)
        return self.predict_from_base(self.base.predict(X, groups), groups)

    def to_dict(self) -> dict:
        if isinstance(self.quantile, StepFunction):
            quantile = {"type": "step", **self.quantile.to_dict()}
        else:
            quantile = {"type": "ispline", **self.quantile.to_dict()}
        return {
            "version": MODEL_VERSION,
            "loss": self.loss.to_dict(),
            "base": self.base.to_dict(),
            "cdf_samples": {g: v.tolist() for g, v in self.cdf_samples.items()},
            "quantile": quantile,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FairModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        q = dict(d["quantile"])
        kind = q.pop("type")
        if kind == "step":
            quantile = StepFunction.from_dict(q)
        elif kind == "ispline":
            quantile = SplineFit.from_dict(q)
        else:
            raise ValueError(f"unknown quantile type {kind!r}")
        return cls(
            GroupModels.from_dict(d["base"]),
            {g: np.asarray(v, dtype=float) for g, v in d["cdf_samples"].items()},
            quantile,
            LossSpec.from_dict(d["loss"]),
        )


def predict_fair(model: FairModel, x, s) -> float:
    """Fair prediction for a single feature vector ``x`` in group ``s``."""
    s = str(s)
    if s not in model.cdf_samples:
        raise KeyError(f"unknown group label {s!r}")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(model.predict(x, [s])[0])


def rank_transform(cdf_samples: dict, base_preds, groups) -> np.ndarray:
    base_preds = np.asarray(base_preds, dtype=float)
    groups = np.asarray(groups).astype(str)
    u = np.empty(base_preds.size)
    for g in np.unique(groups):
        if g not in cdf_samples:
            raise KeyError(f"unknown group label {g!r}")
        mask = groups == g
        u[mask] = ecdf_value(cdf_samples[g], base_preds[mask])
    return u


def calibrate(base_preds, groups, ys, spec: LossSpec, spline: Optional[SplineBasisConfig] = None):
    """Empirical CDFs per group and the shared monotone fit on the pooled ranks.

    Returns ``(cdf_samples, quantile, ranks)``.
    """
    base_preds = np.asarray(base_preds, dtype=float)
    groups = np.asarray(groups).astype(str)
    cdf_samples = {g: np.sort(base_preds[groups == g]) for g in np.unique(groups)}
    u = rank_transform(cdf_samples, base_preds, groups)
    return cdf_samples, fit_monotone(u, ys, spec, spline), u


def split_indices(data: Dataset, mode: SplitMode):
    """Row indices for the base-fit and calibration samples."""
    everything = np.arange(len(data))
    if mode.kind == "reuse":
        return everything, everything
    rng = np.random.default_rng(mode.seed)
    need = data.features.shape[1] + 1
    est, cal = [], []
    for g, idx in data.group_indices().items():
        idx = rng.permutation(idx)
        k = max(need, int(round(mode.fraction * idx.size)))
        if k >= idx.size:
            raise ValueError(f"group {g!r} is too small to split ({idx.size} rows)")
        est.append(idx[:k])
        cal.append(idx[k:])
    return np.sort(np.concatenate(est)), np.sort(np.concatenate(cal))


def fit_fair(
    train: Dataset,
    spec: LossSpec,
    qcfg: QClassConfig = QClassConfig(),
    split: SplitMode = REUSE,
    learner=fit_linear,
) -> FairModel:
    """Fit the two-step fair predictor on ``train``."""
    if len(train.group_labels) < 1:
        raise ValueError("training data has no rows")
    spline = qcfg.spline
    if qcfg.solver == "ispline" and qcfg.cv is not None:
        spline, _ = select_cv(train, spec, qcfg.cv, split, learner=learner)
        log.info("cross-validation picked degree=%d knots=%d", spline.degree, spline.n_interior_knots)
    est_idx, cal_idx = split_indices(train, split)
    base = fit_groupwise(train.subset(est_idx), spec, learner)
    cal = train.subset(cal_idx)
    preds = base.predict(cal.features, cal.groups)
    cdf_samples, quantile, _ = calibrate(preds, cal.groups, cal.responses, spec, spline)
    return FairModel(base, cdf_samples, quantile, spec)


def stratified_folds(groups, folds: int, seed: int) -> np.ndarray:
    """Fold id per row; every group is spread evenly over the folds."""
    groups = np.asarray(groups).astype(str)
    rng = np.random.default_rng(seed)
    fold = np.empty(groups.size, dtype=int)
    for g in sorted(set(groups.tolist())):
        idx = rng.permutation(np.flatnonzero(groups == g))
        fold[idx] = np.arange(idx.size) % folds
    return fold


def cv_candidate_table(
    train: Dataset, spec: LossSpec, cv: CVConfig, split: SplitMode = REUSE, learner=fit_linear
) -> list[dict]:
    """Mean held-out KS and risk for every (degree, knots) pair.

    Infeasible candidates (a fit failed in some fold) carry ``feasible=False``
    and NaN metrics.
    """
    need = max(train.features.shape[1] + 1, 2 * cv.folds)
    for g, idx in train.group_indices().items():
        if idx.size < need:
            raise CVError(f"group {g!r} has {idx.size} rows; cross-validation needs {need}")
    grid = [(d, k) for d in cv.degrees for k in cv.knot_counts]
    ks = {c: [] for c in grid}
    risk = {c: [] for c in grid}
    bad = set()
    fold = stratified_folds(train.groups, cv.folds, cv.seed)
    for f in range(cv.folds):
        fit_part = train.subset(np.flatnonzero(fold != f))
        held = train.subset(np.flatnonzero(fold == f))
        est_idx, cal_idx = split_indices(fit_part, split)
        base = fit_groupwise(fit_part.subset(est_idx), spec, learner)
        cal = fit_part.subset(cal_idx)
        cal_preds = base.predict(cal.features, cal.groups)
        cdf_samples = {g: np.sort(cal_preds[cal.groups == g]) for g in cal.group_labels}
        u_cal = rank_transform(cdf_samples, cal_preds, cal.groups)
        u_held = rank_transform(cdf_samples, base.predict(held.features, held.groups), held.groups)
        for c in grid:
            if c in bad:
                continue
            try:
                q = fit_ispline(u_cal, cal.responses, spec, SplineBasisConfig(*c))
            except (ConfigurationError, ValueError, ArithmeticError) as exc:
                log.debug("candidate %s infeasible: %s", c, exc)
                bad.add(c)
                continue
            pred = np.asarray(eval_spline(q, u_held))
            if spec.kind is LossKind.CROSS_ENTROPY:
                pred = np.clip(pred, CE_EPS, 1.0 - CE_EPS)
            ks[c].append(ks_distance(pred, held.groups))
            risk[c].append(float(np.mean(loss_value(spec, pred, held.responses))))
    table = []
    for c in grid:
        ok = c not in bad
        table.append({
            "degree": c[0],
            "knots": c[1],
            "ks": float(np.mean(ks[c])) if ok else math.nan,
            "risk": float(np.mean(risk[c])) if ok else math.nan,
            "feasible": ok,
        })
    return table


def select_candidate(table: list[dict], ks_fraction: float) -> dict:
    """Two-stage rule: keep the lowest-KS fraction, then take the lowest risk.

    The KS cutoff is the ``ceil(ks_fraction * N)``-th smallest mean KS over
    the ``N`` feasible candidates; every candidate at or below it survives.
    Ties in risk go to the lower degree, then the fewer knots.
    """
    feasible = [r for r in table if r["feasible"]]
    if not feasible:
        raise CVError("no feasible (degree, knots) candidate")
    ks_sorted = sorted(r["ks"] for r in feasible)
    cutoff = ks_sorted[max(1, math.ceil(ks_fraction * len(feasible))) - 1]
    survivors = [r for r in feasible if r["ks"] <= cutoff]
    return min(survivors, key=lambda r: (r["risk"], r["degree"], r["knots"]))


def select_cv(
    train: Dataset, spec: LossSpec, cv: CVConfig, split: SplitMode = REUSE, learner=fit_linear
):
    """Pick the I-spline degree and knot count by cross-validation.

    Returns ``(config, candidate_table)``.
    """
    table = cv_candidate_table(train, spec, cv, split, learner)
    best = select_candidate(table, cv.ks_fraction)
    return SplineBasisConfig(best["degree"], best["knots"]), table
