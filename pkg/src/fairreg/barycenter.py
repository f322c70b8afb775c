"""Population fair quantile function for known group-wise latent quantiles.

For each rank ``u`` the fair quantile solves
``argmin_q sum_s r_s E[L(q, Y) | latent = Q_s(u)]``, with responses
``Y = Q_s(u) + sigma_s * Z`` (``Z`` standard normal) for the location losses.
These routines serve as ground truth for synthetic experiments and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .losses import LossKind, LossSpec, loss_value

BISECT_TOL = 1e-10
MC_DRAWS = 1_000_000


class BracketError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    weight: float
    quantile: Callable[[float], float]
    sigma: float = 1.0


def _check_groups(groups: Sequence[GroupSpec]):
    if len(groups) < 1:
        raise ValueError("need at least one group")
    total = sum(g.weight for g in groups)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"group weights must sum to 1, got {total!r}")
    if any(not 0.0 < g.weight <= 1.0 for g in groups):
        raise ValueError("group weights must lie in (0, 1]")


def _latent(u, groups):
    return np.array([float(g.quantile(u)) for g in groups])


_CLOSED_FORM_ALIASES = {
    "squared_mean": "squared",
    "cross_entropy_mean": "cross_entropy",
    "poisson_canonical": "poisson",
}


def qtilde_closed_form(kind: str, u: float, groups: Sequence[GroupSpec]) -> float:
    """Closed-form fair quantile for ``squared``, ``cross_entropy`` or ``poisson``.

    Squared and cross-entropy give the weighted average of the latent
    quantiles. Poisson (canonical log link, latent on the natural-parameter
    scale) gives the log of the weighted average of ``exp(Q_s(u))``.
    """
    _check_groups(groups)
    kind = _CLOSED_FORM_ALIASES.get(kind, kind)
    r = np.array([g.weight for g in groups])
    q = _latent(u, groups)
    if kind in ("squared", "cross_entropy"):
        return float(r @ q)
    if kind == "poisson":
        top = q.max()
        return float(top + math.log(r @ np.exp(q - top)))
    raise ValueError(f"no closed form for {kind!r}")


def _norm_pdf(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def expected_huber_psi(mu, sigma, q, m):
    """``E[psi_m(mu + sigma Z - q)]`` for standard normal ``Z``."""
    c = mu - q
    a = (-m - c) / sigma
    b = (m - c) / sigma
    return c * (ndtr(b) - ndtr(a)) + sigma * (_norm_pdf(a) - _norm_pdf(b)) + m * (1.0 - ndtr(b)) - m * ndtr(a)


def _bisect_decreasing(fn, lo, hi, tol=BISECT_TOL):
    """Root of a non-increasing function with a sign change on [lo, hi]."""
    flo, fhi = fn(lo), fn(hi)
    if flo < 0 or fhi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if abs(fm) <= tol and hi - lo <= 1e-12 * max(1.0, abs(mid)):
            return mid
        if fm > 0:
            lo = mid
        elif fm < 0:
            hi = mid
        else:
            return mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def _root(fn, q, sigmas):
    spread = 10.0 * max(sigmas)
    lo, hi = q.min() - spread, q.max() + spread
    for _ in range(6):
        try:
            return _bisect_decreasing(fn, lo, hi)
        except BracketError:
            width = hi - lo
            lo, hi = lo - width / 2, hi + width / 2
    raise BracketError(f"could not bracket the root; last bracket [{lo}, {hi}]")


def qtilde_pointwise(spec: LossSpec, u: float, groups: Sequence[GroupSpec]) -> float:
    """Fair quantile at rank ``u`` by solving the pointwise first-order condition."""
    _check_groups(groups)
    r = np.array([g.weight for g in groups])
    q = _latent(u, groups)
    sig = np.array([g.sigma for g in groups])
    kind = spec.kind
    if kind in (LossKind.PINBALL, LossKind.ABSOLUTE):
        tau = 0.5 if kind is LossKind.ABSOLUTE else spec.tau
        # mixture CDF minus tau, written as a decreasing function of q
        return _root(lambda x: tau - float(r @ ndtr((x - q) / sig)), q, sig)
    if kind is LossKind.HUBER:
        return _root(lambda x: float(r @ expected_huber_psi(q, sig, x, spec.m)), q, sig)
    if kind is LossKind.SQUARED:
        return _root(lambda x: float(r @ (q - x)), q, sig)
    if kind is LossKind.CROSS_ENTROPY:
        if np.any((q <= 0) | (q >= 1)):
            raise ValueError("cross-entropy latent quantiles must lie in (0, 1)")
        return _bisect_decreasing(lambda x: float(r @ (q - x)) / (x * (1 - x)), 1e-12, 1 - 1e-12)
    if kind is LossKind.POISSON:
        return _root(lambda x: float(r @ np.exp(q)) - math.exp(x), q, np.ones_like(q))
    raise ValueError(f"unsupported loss {kind}")


def qtilde_monte_carlo(spec: LossSpec, u: float, groups: Sequence[GroupSpec], seed: int = 0,
                       draws: int = MC_DRAWS) -> float:
    """Golden-section minimization of a Monte-Carlo estimate of the pointwise risk.

    Test-only fallback for the location losses; the Gaussian noise model is
    sampled with a fixed seed.
    """
    _check_groups(groups)
    rng = np.random.default_rng(seed)
    q = _latent(u, groups)
    counts = rng.multinomial(draws, [g.weight for g in groups])
    ys = np.concatenate([
        qs + g.sigma * rng.standard_normal(c) for qs, g, c in zip(q, groups, counts)
    ])

    def risk(x):
        return float(np.mean(loss_value(spec, x, ys)))

    spread = 10.0 * max(g.sigma for g in groups)
    a, b = q.min() - spread, q.max() + spread
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    fc, fd = risk(c), risk(d)
    while b - a > 1e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = risk(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = risk(d)
    return 0.5 * (a + b)
