"""Group-wise empirical risk minimization over linear predictors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .data import Dataset
from .losses import LossKind, LossSpec, huber_psi, loss_value

RIDGE_JITTER = 1e-8
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 200


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap.

    The last iterate is kept on ``.model``.
    """

    def __init__(self, message: str, model: "LinearModel"):
        super().__init__(message)
        self.model = model


class GroupSizeError(ValueError):
    def __init__(self, group, n_rows: int, needed: int):
        super().__init__(f"group {group!r} has {n_rows} rows; at least {needed} are required")
        self.group = group


class Learner(Protocol):
    """Anything with ``predict(X) -> ndarray`` can act as a per-group model."""

    def predict(self, X) -> np.ndarray: ...


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    weights: np.ndarray
    link: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if not (np.isfinite(self.intercept) and np.all(np.isfinite(w))):
            raise ValueError("linear model parameters must be finite")
        if self.link not in ("identity", "logit"):
            raise ValueError(f"unknown link {self.link!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercept", float(self.intercept))

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return self.intercept + X @ self.weights

    def predict(self, X) -> np.ndarray:
        eta = self.linear_predictor(X)
        if self.link == "logit":
            return 1.0 / (1.0 + np.exp(-eta))
        return eta

    def to_dict(self) -> dict:
        out = {"intercept": self.intercept, "weights": self.weights.tolist()}
        if self.link != "identity":
            out["link"] = self.link
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(float(d["intercept"]), np.asarray(d["weights"], dtype=float), d.get("link", "identity"))


@dataclass(frozen=True)
class GroupModels:
    """One fitted predictor per protected group."""

    models: Mapping[str, Learner]
    loss: LossSpec
    groups: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "models", dict(self.models))
        object.__setattr__(self, "groups", tuple(sorted(self.models)))

    def predict(self, X, groups) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        groups = np.asarray(groups).astype(str)
        out = np.empty(len(groups))
        for g in np.unique(groups):
            if g not in self.models:
                raise KeyError(f"unknown group label {g!r}")
            mask = groups == g
            out[mask] = self.models[g].predict(X[mask])
        return out

    def to_dict(self) -> dict:
        groups = {}
        for g, m in self.models.items():
            if not isinstance(m, LinearModel):
                raise TypeError(f"group {g!r} uses a non-serializable learner {type(m).__name__}")
            groups[g] = m.to_dict()
        return {"loss": self.loss.to_dict(), "groups": groups}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupModels":
        loss = LossSpec.from_dict(d["loss"])
        return cls({str(g): LinearModel.from_dict(m) for g, m in d["groups"].items()}, loss)


def _design(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _solve(A, b):
    if np.linalg.cond(A) > 1e12:
        A = A + RIDGE_JITTER * np.eye(A.shape[0])
    return np.linalg.solve(A, b)


def _least_squares(Z, y, w=None):
    Zw = Z if w is None else Z * w[:, None]
    return _solve(Zw.T @ Z, Zw.T @ y)


def _smooth_objective(spec: LossSpec, Z, y):
    """Mean loss, gradient and Hessian in the linear predictor's parameters."""
    n = Z.shape[0]
    kind = spec.kind
    if kind is LossKind.HUBER:
        def fgh(beta):
            r = y - Z @ beta
            val = np.mean(loss_value(spec, Z @ beta, y))
            grad = -Z.T @ huber_psi(r, spec.m) / n
            inlier = (np.abs(r) <= spec.m).astype(float)
            hess = (Z * inlier[:, None]).T @ Z / n
            return val, grad, hess
    elif kind is LossKind.POISSON:
        def fgh(beta):
            eta = Z @ beta
            mu = np.exp(eta)
            val = np.mean(mu - y * eta)
            grad = Z.T @ (mu - y) / n
            hess = (Z * mu[:, None]).T @ Z / n
            return val, grad, hess
    elif kind is LossKind.CROSS_ENTROPY:
        def fgh(beta):
            eta = Z @ beta
            # log(1 + e^eta) - y*eta, computed stably
            val = np.mean(np.logaddexp(0.0, eta) - y * eta)
            p = 1.0 / (1.0 + np.exp(-eta))
            grad = Z.T @ (p - y) / n
            hess = (Z * (p * (1 - p))[:, None]).T @ Z / n
            return val, grad, hess
    else:
        raise ValueError(f"no smooth objective for {kind.value}")
    return fgh


def _newton(fgh, beta0, link="identity"):
    beta = beta0.copy()
    val, grad, hess = fgh(beta)
    for _ in range(NEWTON_MAX_ITER):
        if np.linalg.norm(grad) <= NEWTON_TOL:
            return beta
        direction = _solve(hess, grad)
        t = 1.0
        # slack of a few ulps so rounding noise cannot block a full step
        slack = 8 * np.finfo(float).eps * abs(val)
        while True:
            cand = beta - t * direction
            cval, cgrad, chess = fgh(cand)
            if np.isfinite(cval) and cval <= val + slack:
                break
            t *= 0.5
            if t < 1e-12:
                # no descent available at machine precision
                return beta
        beta, val, grad, hess = cand, cval, cgrad, chess
    if np.linalg.norm(grad) <= NEWTON_TOL:
        return beta
    raise ConvergenceError(
        f"Newton did not converge in {NEWTON_MAX_ITER} iterations "
        f"(gradient norm {np.linalg.norm(grad):.3g})",
        LinearModel(beta[0], beta[1:], link),
    )


def _lp_check(Z, y, tau):
    """Pinball regression solved exactly as a linear program.

    Residuals are split as ``y - Z beta = u_plus - u_minus`` with both parts
    nonnegative; the objective is ``tau * sum(u_plus) + (1 - tau) * sum(u_minus)``.
    """
    n, p = Z.shape
    eye = sparse.identity(n, format="csr")
    A = sparse.hstack([sparse.csr_matrix(Z), eye, -eye], format="csr")
    c = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
    bounds = [(None, None)] * p + [(0.0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if res.status != 0:
        beta = _least_squares(Z, y)
        raise ConvergenceError(f"check-loss solver failed: {res.message}", LinearModel(beta[0], beta[1:]))
    return res.x[:p]


def fit_linear(X, y, spec: LossSpec) -> LinearModel:
    """Minimize the empirical loss over ``intercept + X @ weights``."""
    Z = _design(X)
    y = np.asarray(y, dtype=float).ravel()
    n, p = Z.shape
    if y.size != n:
        raise ValueError(f"X has {n} rows but y has {y.size}")
    if n < p:
        raise ValueError(f"need at least {p} rows for {p - 1} features, got {n}")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in X or y")

    kind = spec.kind
    if kind is LossKind.SQUARED:
        beta = _least_squares(Z, y)
        return LinearModel(beta[0], beta[1:])
    if kind in (LossKind.ABSOLUTE, LossKind.PINBALL):
        tau = 0.5 if kind is LossKind.ABSOLUTE else spec.tau
        beta = _lp_check(Z, y, tau)
        return LinearModel(beta[0], beta[1:])

    beta0 = np.zeros(p)
    link = "identity"
    if kind is LossKind.HUBER:
        beta0 = _least_squares(Z, y)
    elif kind is LossKind.POISSON:
        beta0[0] = np.log(max(y.mean(), 1e-8))
    else:
        link = "logit"
        ybar = min(max(y.mean(), 1e-6), 1 - 1e-6)
        beta0[0] = np.log(ybar / (1 - ybar))
    beta = _newton(_smooth_objective(spec, Z, y), beta0, link)
    return LinearModel(beta[0], beta[1:], link)


def fit_groupwise(data: Dataset, spec: LossSpec, learner=fit_linear) -> GroupModels:
    """Fit one model per group label with ``learner(X, y, spec)``."""
    needed = data.features.shape[1] + 1
    models = {}
    for g, idx in data.group_indices().items():
        if idx.size < needed:
            raise GroupSizeError(g, int(idx.size), needed)
        models[g] = learner(data.features[idx], data.responses[idx], spec)
    return GroupModels(models, spec)


def empirical_risk(model: Learner, X, y, spec: LossSpec) -> float:
    return float(np.mean(loss_value(spec, model.predict(X), y)))
