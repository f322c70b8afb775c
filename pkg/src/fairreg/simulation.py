"""Synthetic data generators and the robust-regression experiment driver."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from .base_learners import fit_groupwise
from .barycenter import GroupSpec
from .data import Dataset
from .losses import LossSpec
from .metrics import evaluate
from .pipeline import CVConfig, QClassConfig, REUSE, fit_fair

log = logging.getLogger(__name__)

ROBUST_BETA = np.array([3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0])
ROBUST_SIGMA = 9.67
ROBUST_INTERCEPT = 1.0
MIXTURE_VAR = 0.9 * 1.0 + 0.1 * 225.0

SHIFT_BETA = np.array([0.25])

METHODS = ("base", "fair_isotonic", "fair_ispline")
REDUCED_GRID = {"degrees": (1, 2, 3), "knot_counts": (0, 2, 4)}


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed on the given integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def ar1_cov(d: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


@dataclass(frozen=True)
class RobustSimConfig:
    n_train: int = 500
    n_test: int = 10_000
    a: float = 1.0
    seed: int = 0
    repetitions: int = 200
    huber_m: float = 13.01
    methods: tuple = METHODS
    full_grid: bool = False
    cv_folds: int = 5
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_test % 2:
            raise ValueError("n_test must be even so that both groups get n_test/2 rows")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.n_train < 2:
            raise ValueError("n_train must be at least 2")
        object.__setattr__(self, "methods", tuple(self.methods))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "RobustSimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        return out


def _robust_rows(rng, s: np.ndarray, a: float) -> Dataset:
    n = s.size
    chol = np.linalg.cholesky(ar1_cov(ROBUST_BETA.size))
    X = rng.standard_normal((n, ROBUST_BETA.size)) @ chol.T
    wide = rng.random(n) < 0.1
    v = rng.standard_normal(n) * np.where(wide, 15.0, 1.0)
    eps = v / math.sqrt(MIXTURE_VAR)
    y = ROBUST_INTERCEPT + X @ ROBUST_BETA + a * s + ROBUST_SIGMA * eps
    return Dataset(X, s.astype(int), y)


def gen_robust(config: RobustSimConfig, repetition: int = 0):
    """Training and balanced test sets for the heavy-tailed robust design."""
    rng = make_rng(config.seed, repetition)
    s_train = (rng.random(config.n_train) < 0.5).astype(int)
    train = _robust_rows(rng, s_train, config.a)
    half = config.n_test // 2
    s_test = np.repeat([0, 1], half)
    test = _robust_rows(rng, s_test, config.a)
    return train, test


def gen_shift_squared(n: int, a: float, sigma: float, seed: int, beta=SHIFT_BETA) -> Dataset:
    """Balanced two-group data ``Y = X @ beta + a*S + sigma*Z`` with ``X ~ N(0, I)``."""
    beta = np.asarray(beta, dtype=float)
    rng = make_rng(seed)
    s = np.arange(n) % 2
    X = rng.standard_normal((n, beta.size))
    y = X @ beta + a * s + sigma * rng.standard_normal(n)
    return Dataset(X, s, y)


def shift_group_specs(a: float, sigma: float, beta=SHIFT_BETA, weights=(0.5, 0.5)):
    """Latent quantiles of the shift model: ``Q_s(u) = a*s + |beta| * Phi^-1(u)``."""
    scale = float(np.linalg.norm(beta))
    return [
        GroupSpec(weights[s], lambda u, s=s: a * s + scale * float(ndtri(u)), sigma)
        for s in (0, 1)
    ]


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    per_rep: dict = field(default_factory=dict)
    failures: int = 0
    n_reps: int = 0

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "failures": self.failures,
            "n_reps": self.n_reps,
            "per_rep": {m: {k: list(v) for k, v in d.items()} for m, d in self.per_rep.items()},
        }


def _one_repetition(config: RobustSimConfig, rep: int) -> dict:
    spec = LossSpec.huber(config.huber_m)
    train, test = gen_robust(config, rep)
    out = {}
    if "base" in config.methods:
        rep_ = evaluate(fit_groupwise(train, spec), test, spec)
        out["base"] = (rep_.risk, rep_.ks)
    if "fair_isotonic" in config.methods:
        rep_ = evaluate(fit_fair(train, spec, QClassConfig("isotonic")), test, spec)
        out["fair_isotonic"] = (rep_.risk, rep_.ks)
    if "fair_ispline" in config.methods:
        grid = {} if config.full_grid else dict(REDUCED_GRID)
        cv = CVConfig(folds=config.cv_folds, seed=config.seed * 100_003 + rep, **grid)
        rep_ = evaluate(fit_fair(train, spec, QClassConfig("ispline", cv=cv), REUSE), test, spec)
        out["fair_ispline"] = (rep_.risk, rep_.ks)
    return out


def _safe_repetition(args):
    config, rep = args
    try:
        return _one_repetition(config, rep)
    except Exception as exc:  # a failed repetition is counted, not fatal
        log.warning("repetition %d failed: %s", rep, exc)
        return None


def run_experiment(config: RobustSimConfig) -> ExperimentResult:
    """Repeat the robust simulation and summarize risk and KS per method."""
    jobs = [(config, rep) for rep in range(config.repetitions)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_safe_repetition, jobs))
    else:
        results = [_safe_repetition(j) for j in jobs]

    per_rep = {m: {"risk": [], "ks": []} for m in config.methods}
    failures = 0
    for res in results:
        if res is None:
            failures += 1
            continue
        for m, (risk, ks) in res.items():
            per_rep[m]["risk"].append(risk)
            per_rep[m]["ks"].append(ks)

    rows = []
    for m in config.methods:
        for metric in ("risk", "ks"):
            vals = np.asarray(per_rep[m][metric])
            n = vals.size
            mean = float(vals.mean()) if n else math.nan
            stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            rows.append({"method": m, "metric": metric, "mean": mean, "stderr": stderr, "n_reps": n})
    return ExperimentResult(rows, per_rep, failures, config.repetitions)
