import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairreg.losses import (
    DomainError,
    LossKind,
    LossSpec,
    block_minimizer,
    loss_subgrad,
    loss_value,
)
from oracles import grid_argmin

ALL_SPECS = [
    LossSpec.squared(),
    LossSpec.absolute(),
    LossSpec.pinball(0.25),
    LossSpec.pinball(0.8),
    LossSpec.huber(1.0),
    LossSpec.huber(13.01),
    LossSpec.poisson(),
    LossSpec.cross_entropy(),
]


def test_pinball_branches():
    spec = LossSpec.pinball(0.25)
    assert loss_value(spec, 0.0, 2.0) == pytest.approx(0.5)
    assert loss_value(spec, 0.0, -2.0) == pytest.approx(1.5)


def test_huber_linear_branch():
    assert loss_value(LossSpec.huber(1.0), 0.0, 2.0) == pytest.approx(1.5)
    assert loss_value(LossSpec.huber(1.0), 0.0, 0.5) == pytest.approx(0.125)


def test_poisson_value():
    assert loss_value(LossSpec.poisson(), 0.0, 3.0) == pytest.approx(1.0)


def test_cross_entropy_domain():
    assert loss_value(LossSpec.cross_entropy(), 0.5, 1.0) == pytest.approx(math.log(2))
    with pytest.raises(DomainError):
        loss_value(LossSpec.cross_entropy(), 1.0, 1.0)
    with pytest.raises(DomainError):
        loss_subgrad(LossSpec.cross_entropy(), 0.0, 1.0)


def test_subgrad_examples():
    assert loss_subgrad(LossSpec.squared(), 3.0, 1.0) == pytest.approx(4.0)
    assert loss_subgrad(LossSpec.huber(1.0), 0.0, 2.0) == pytest.approx(-1.0)
    assert loss_subgrad(LossSpec.pinball(0.5), 1.3, 1.3) == 0.0
    assert loss_subgrad(LossSpec.pinball(0.2), 1.3, 1.3) == pytest.approx(0.3)
    assert loss_subgrad(LossSpec.absolute(), 2.0, 2.0) == 0.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "pinball"},
        {"kind": "pinball", "tau": 1.0},
        {"kind": "huber"},
        {"kind": "huber", "m": 0.0},
        {"kind": "squared", "tau": 0.5},
        {"kind": "absolute", "m": 1.0},
    ],
)
def test_spec_invariants(kwargs):
    with pytest.raises(ValueError):
        LossSpec(**kwargs)


def test_spec_json_round_trip():
    for spec in ALL_SPECS:
        assert LossSpec.from_dict(spec.to_dict()) == spec
    assert LossSpec.from_dict({"kind": "pinball", "tau": 0.25}).tau == 0.25
    with pytest.raises(ValueError, match="unknown"):
        LossSpec.from_dict({"kind": "squared", "scale": 2})
    with pytest.raises(ValueError, match="unknown loss kind"):
        LossSpec.from_dict({"kind": "hinge"})


def _sample_point(spec, rng):
    if spec.kind is LossKind.CROSS_ENTROPY:
        return rng.uniform(0.02, 0.98), float(rng.integers(0, 2))
    if spec.kind is LossKind.POISSON:
        return rng.normal(), float(rng.integers(0, 6))
    return rng.normal(scale=3), rng.normal(scale=3)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind.value)
def test_discrete_convexity(spec):
    rng = np.random.default_rng(1)
    for _ in range(300):
        _, y = _sample_point(spec, rng)
        if spec.kind is LossKind.CROSS_ENTROPY:
            q = np.sort(rng.uniform(0.01, 0.99, 3))
        else:
            q = np.sort(rng.normal(scale=4, size=3))
        if q[0] == q[2]:
            continue
        lam = (q[2] - q[1]) / (q[2] - q[0])
        lhs = loss_value(spec, q[1], y)
        rhs = lam * loss_value(spec, q[0], y) + (1 - lam) * loss_value(spec, q[2], y)
        assert lhs <= rhs + 1e-9 * (1 + abs(rhs))


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind.value)
def test_subgradient_matches_central_difference(spec):
    rng = np.random.default_rng(2)
    h = 1e-5
    checked = 0
    for _ in range(300):
        q, y = _sample_point(spec, rng)
        kinks = [y]
        if spec.kind is LossKind.HUBER:
            kinks += [y - spec.m, y + spec.m]
        if min(abs(q - k) for k in kinks) < 1e-3:
            continue
        fd = (loss_value(spec, q + h, y) - loss_value(spec, q - h, y)) / (2 * h)
        g = loss_subgrad(spec, q, y)
        assert abs(fd - g) <= 1e-6 * (1 + abs(g))
        checked += 1
    assert checked > 200


def test_block_minimizer_closed_forms():
    assert block_minimizer(LossSpec.squared(), [1, 2, 3], [1, 1, 1]) == pytest.approx(2.0)
    assert block_minimizer(LossSpec.absolute(), [5, 1, 3]) == 3.0
    # lower weighted quantile: cumulative weights 1,2,3,4 reach 0.25*4 at the first value
    assert block_minimizer(LossSpec.pinball(0.25), [4, 3, 2, 1]) == 1.0
    assert block_minimizer(LossSpec.pinball(0.75), [1, 2, 3, 4], [1, 1, 1, 5]) == 4.0
    assert block_minimizer(LossSpec.cross_entropy(), [0, 0]) == pytest.approx(1e-6)
    assert block_minimizer(LossSpec.cross_entropy(), [1, 0, 1, 1]) == pytest.approx(0.75)


def test_block_minimizer_poisson_log_mean():
    # grid oracle over sum(e^q - y q) for y in {1, 3}; minimum near q = 0.6931
    q_grid, _ = grid_argmin(lambda q: sum(math.exp(q) - y * q for y in (1, 3)), -2, 3, 1e-4)
    q = block_minimizer(LossSpec.poisson(), [1, 3], [1, 1])
    assert q == pytest.approx(math.log(2), abs=1e-12)
    assert abs(q - q_grid) <= 1e-4


def test_block_minimizer_poisson_sentinel():
    assert block_minimizer(LossSpec.poisson(), [0, 0]) == -math.inf


def test_block_minimizer_huber_symmetric():
    spec = LossSpec.huber(1.0)
    q = block_minimizer(spec, [0, 10], [1, 1])
    assert q == pytest.approx(5.0)
    # the objective is flat (value 9) on [1, 9]; 5 must attain the grid minimum
    _, best = grid_argmin(lambda t: sum(loss_value(spec, t, y) for y in (0, 10)), 0, 10, 1e-4)
    assert sum(loss_value(spec, q, y) for y in (0, 10)) <= best + 1e-12


def test_block_minimizer_errors():
    with pytest.raises(ValueError):
        block_minimizer(LossSpec.squared(), [])
    with pytest.raises(ValueError):
        block_minimizer(LossSpec.squared(), [1, 2], [1])
    with pytest.raises(ValueError):
        block_minimizer(LossSpec.squared(), [1, 2], [1, 0])


def _random_instance(rng):
    kind = rng.integers(0, 6)
    n = int(rng.integers(1, 8))
    ws = rng.uniform(0.2, 3.0, n)
    if kind == 0:
        spec = LossSpec.squared()
    elif kind == 1:
        spec = LossSpec.absolute()
    elif kind == 2:
        spec = LossSpec.pinball(float(rng.uniform(0.05, 0.95)))
    elif kind == 3:
        spec = LossSpec.huber(float(rng.uniform(0.3, 3.0)))
    elif kind == 4:
        spec = LossSpec.poisson()
        return spec, rng.integers(0, 6, n).astype(float), ws
    else:
        spec = LossSpec.cross_entropy()
        return spec, rng.integers(0, 2, n).astype(float), ws
    return spec, np.round(rng.uniform(-3, 3, n), 3), ws


def test_block_minimizer_beats_grid_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        spec, ys, ws = _random_instance(rng)
        q = block_minimizer(spec, ys, ws)
        if spec.kind is LossKind.CROSS_ENTROPY:
            grid = np.arange(1e-3, 1.0, 1e-3)
        elif spec.kind is LossKind.POISSON:
            if not np.any(ys > 0):
                assert q == -math.inf
                continue
            grid = np.arange(-3.0, 3.0, 1e-3)
        else:
            grid = np.arange(ys.min() - 1, ys.max() + 1 + 1e-9, 1e-3)
        objective = (ws[None, :] * loss_value(spec, grid[:, None], ys[None, :])).sum(axis=1)
        got = float(np.sum(ws * loss_value(spec, q, ys)))
        assert got <= objective.min() + 1e-8


@settings(max_examples=200, deadline=None)
@given(
    ys=st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=12),
    extra=st.floats(0, 50),
    which=st.sampled_from(["squared", "absolute", "pinball", "huber"]),
)
def test_appending_larger_value_never_lowers_minimizer(ys, extra, which):
    spec = {
        "squared": LossSpec.squared(),
        "absolute": LossSpec.absolute(),
        "pinball": LossSpec.pinball(0.3),
        "huber": LossSpec.huber(2.0),
    }[which]
    q = block_minimizer(spec, ys)
    q2 = block_minimizer(spec, ys + [q + extra])
    assert q2 >= q - 1e-9 * (1 + abs(q))
