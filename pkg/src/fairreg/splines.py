"""M-spline and I-spline bases on [0, 1] and a monotone I-spline fitter.

Degree follows Ramsay's order convention: ``degree=1`` gives piecewise
constant M-splines (piecewise linear I-splines).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .losses import CE_EPS, LossKind, LossSpec, block_minimizer, loss_value

HJ_TOL = 1e-6
HJ_MAX_EVALS = 100_000


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SplineBasisConfig:
    degree: int
    n_interior_knots: int

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigurationError(f"degree must be an integer >= 1, got {self.degree}")
        if int(self.n_interior_knots) != self.n_interior_knots or self.n_interior_knots < 0:
            raise ConfigurationError(
                f"n_interior_knots must be an integer >= 0, got {self.n_interior_knots}"
            )

    @property
    def dim(self) -> int:
        return self.n_interior_knots + self.degree

    @property
    def knots(self) -> np.ndarray:
        return _knot_vector(self.degree, self.n_interior_knots)


@lru_cache(maxsize=None)
def _knot_vector(degree: int, n_interior: int) -> np.ndarray:
    interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    t = np.concatenate([np.zeros(degree), interior, np.ones(degree)])
    t.setflags(write=False)
    return t


def _check_unit(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u)) or np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("u must lie in [0, 1]")
    return u


def _mspline_matrix(t: np.ndarray, k: int, u: np.ndarray) -> np.ndarray:
    """Order-``k`` M-splines on knots ``t`` at points ``u`` (1-D), shape (N, len(t)-k)."""
    n_int = len(t) - 1
    # last interval with positive length is closed on the right so u=1 is covered
    last = int(np.nonzero(np.diff(t) > 0)[0][-1])
    idx = np.clip(np.searchsorted(t, u, side="right") - 1, 0, last)
    widths = np.diff(t)
    m = np.zeros((u.size, n_int))
    rows = np.arange(u.size)
    m[rows, idx] = 1.0 / widths[idx]
    for order in range(2, k + 1):
        nb = len(t) - order
        nxt = np.zeros((u.size, nb))
        for j in range(nb):
            span = t[j + order] - t[j]
            if span <= 0:
                continue
            acc = (u - t[j]) * m[:, j] + (t[j + order] - u) * m[:, j + 1]
            nxt[:, j] = order * acc / ((order - 1) * span)
        m = nxt
    return m


def mspline_basis(config: SplineBasisConfig, u):
    """M-spline basis values at ``u``; returns shape (dim,) or (N, dim)."""
    u = _check_unit(u)
    scalar = u.ndim == 0
    out = _mspline_matrix(config.knots, config.degree, np.atleast_1d(u).ravel())
    return out[0] if scalar else out


@lru_cache(maxsize=None)
def _interval_integrals(degree: int, n_interior: int):
    """Gauss-Legendre rule and per-interval integrals of every M-spline."""
    t = _knot_vector(degree, n_interior)
    # pieces are polynomials of degree `degree - 1`; this rule integrates them exactly
    npts = max(1, (degree + 1) // 2 + 1)
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    widths = np.diff(t)
    full = np.zeros((len(t) - 1, len(t) - degree))
    for i, w in enumerate(widths):
        if w <= 0:
            continue
        x = t[i] + 0.5 * w * (nodes + 1.0)
        vals = _mspline_matrix(t, degree, x)
        full[i] = 0.5 * w * (weights @ vals)
    cum = np.vstack([np.zeros(full.shape[1]), np.cumsum(full, axis=0)])
    return nodes, weights, cum


def ispline_basis(config: SplineBasisConfig, u):
    """I-spline basis ``psi_j(u) = int_0^u M_j``; returns shape (dim,) or (N, dim)."""
    u = _check_unit(u)
    scalar = u.ndim == 0
    u = np.atleast_1d(u).ravel()
    t = config.knots
    nodes, weights, cum = _interval_integrals(config.degree, config.n_interior_knots)
    last = int(np.nonzero(np.diff(t) > 0)[0][-1])
    idx = np.clip(np.searchsorted(t, u, side="right") - 1, 0, last)
    left = t[idx]
    half = 0.5 * (u - left)
    x = left[:, None] + half[:, None] * (nodes[None, :] + 1.0)
    vals = _mspline_matrix(t, config.degree, x.ravel()).reshape(u.size, nodes.size, -1)
    partial = half[:, None] * np.einsum("q,nqj->nj", weights, vals)
    out = cum[idx] + partial
    # exact endpoint values; quadrature only adds rounding there
    out[u == 0.0] = 0.0
    out[u == 1.0] = 1.0
    np.clip(out, 0.0, 1.0, out=out)
    return out[0] if scalar else out


@dataclass(frozen=True)
class SplineFit:
    config: SplineBasisConfig
    alpha0: float
    alphas: np.ndarray

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float).ravel()
        if alphas.size != self.config.dim:
            raise ConfigurationError(
                f"expected {self.config.dim} coefficients, got {alphas.size}"
            )
        if np.any(alphas < 0):
            raise ValueError("I-spline coefficients must be non-negative")
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha0", float(self.alpha0))

    def __call__(self, u):
        return eval_spline(self, u)

    def to_dict(self) -> dict:
        return {
            "degree": self.config.degree,
            "interior_knots": self.config.n_interior_knots,
            "alpha0": self.alpha0,
            "alphas": self.alphas.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineFit":
        cfg = SplineBasisConfig(int(d["degree"]), int(d["interior_knots"]))
        return cls(cfg, float(d["alpha0"]), np.asarray(d["alphas"], dtype=float))


def eval_spline(fit: SplineFit, u):
    basis = ispline_basis(fit.config, u)
    out = fit.alpha0 + basis @ fit.alphas
    return float(out) if np.ndim(out) == 0 else out


def hooke_jeeves(objective, x0, steps, lower=None, tol=HJ_TOL, max_evals=HJ_MAX_EVALS):
    """Pattern search with per-coordinate steps, halved on failure.

    ``lower`` holds per-coordinate lower bounds (``-inf`` for free ones);
    every trial point is projected onto them. Returns ``(x, f, n_evals)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    steps = np.asarray(steps, dtype=float).copy()
    lower = np.full_like(x, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    evals = 0

    def f(p):
        nonlocal evals
        evals += 1
        return objective(p)

    def explore(base, fbase):
        p = base.copy()
        for i in range(p.size):
            for sign in (1.0, -1.0):
                trial = p.copy()
                trial[i] = max(trial[i] + sign * steps[i], lower[i])
                if trial[i] == p[i]:
                    continue
                ft = f(trial)
                if ft < fbase:
                    p, fbase = trial, ft
                    break
        return p, fbase

    fx = f(x)
    while steps.max() >= tol and evals < max_evals:
        xn, fn = explore(x, fx)
        if fn < fx:
            # pattern moves while they keep improving
            while evals < max_evals:
                xp = np.maximum(xn + (xn - x), lower)
                x, fx = xn, fn
                xe, fe = explore(xp, f(xp))
                if fe < fx:
                    xn, fn = xe, fe
                else:
                    break
        else:
            steps *= 0.5
    return x, fx, evals


def fit_ispline(us, ys, spec: LossSpec, config: SplineBasisConfig) -> SplineFit:
    """Fit ``alpha0 + sum_j alpha_j psi_j(u)`` with ``alpha_j >= 0`` by pattern search."""
    us = _check_unit(np.asarray(us, dtype=float).ravel())
    ys = np.asarray(ys, dtype=float).ravel()
    if us.shape != ys.shape or us.size == 0:
        raise ValueError("us and ys must be nonempty and equally long")
    if config.dim > us.size:
        raise ConfigurationError(
            f"basis dimension {config.dim} exceeds the number of observations {us.size}"
        )
    psi = ispline_basis(config, us)
    design = np.hstack([np.ones((us.size, 1)), psi])

    a0 = block_minimizer(spec, ys)
    if not np.isfinite(a0):
        # all-zero Poisson responses; any very negative intercept is optimal
        a0 = float(np.log(np.finfo(float).tiny))
    span = float(ys.max() - ys.min())
    step = span / 4.0 if span > 0 else 1.0
    x0 = np.zeros(config.dim + 1)
    x0[0] = a0
    lower = np.concatenate([[-np.inf], np.zeros(config.dim)])

    def objective(p):
        return float(np.sum(loss_value(spec, _clip_for(spec, design @ p), ys)))

    x, _, _ = hooke_jeeves(objective, x0, np.full(x0.size, step), lower)
    return SplineFit(config, x[0], x[1:])


def _clip_for(spec: LossSpec, q):
    if spec.kind is LossKind.CROSS_ENTROPY:
        return np.clip(q, CE_EPS, 1.0 - CE_EPS)
    return q


def spline_objective(fit: SplineFit, us, ys, spec: LossSpec) -> float:
    return float(np.sum(loss_value(spec, _clip_for(spec, eval_spline(fit, us)), ys)))
