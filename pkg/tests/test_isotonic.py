import math

import numpy as np
import pytest

from fairreg.isotonic import FitError, StepFunction, eval_step, fit_isotonic, isotonic_objective
from fairreg.losses import LossSpec, loss_value
from oracles import monotone_grid_min

SQ = LossSpec.squared()


def test_already_monotone_is_identity():
    f = fit_isotonic([0.1, 0.5, 0.9], [1, 2, 3], SQ)
    np.testing.assert_allclose(f.values, [1, 2, 3])
    np.testing.assert_allclose(f.knots, [0.1, 0.5, 0.9])


def test_single_violation_pools():
    us, ys = [0.1, 0.5, 0.9], [1, 3, 2]
    f = fit_isotonic(us, ys, SQ)
    np.testing.assert_allclose(f.values, [1, 2.5, 2.5])
    # grid oracle: minimum over monotone sequences is 0.5
    assert isotonic_objective(f, us, ys, SQ) == pytest.approx(monotone_grid_min(us, ys, SQ), abs=1e-9)


def test_ties_share_a_value():
    us, ys = [0.2, 0.2, 0.8], [3, 1, 5]
    f = fit_isotonic(us, ys, SQ)
    np.testing.assert_allclose(f.knots, [0.2, 0.8])
    np.testing.assert_allclose(f.values, [2, 5])
    assert isotonic_objective(f, us, ys, SQ) == pytest.approx(monotone_grid_min(us, ys, SQ), abs=1e-9)


def test_ties_force_pooling_even_when_sorted_order_would_not():
    # without the tie constraint the optimum would be (0, 4, 4) in input order
    f = fit_isotonic([0.5, 0.5, 0.9], [0, 4, 4], SQ)
    np.testing.assert_allclose(f.values, [2, 4])


def test_step_evaluation():
    f = StepFunction([0.5], [7])
    assert eval_step(f, 0.1) == 7
    g = StepFunction([0.2, 0.8], [1, 4])
    assert eval_step(g, 0.8) == 4
    assert eval_step(g, 0.5) == 1
    assert eval_step(g, 1.0) == 4
    np.testing.assert_allclose(eval_step(g, [0.0, 0.2, 0.79, 0.8]), [1, 1, 1, 4])
    with pytest.raises(ValueError):
        eval_step(g, 1.5)
    with pytest.raises(ValueError):
        eval_step(g, -0.1)


def test_step_function_invariants():
    with pytest.raises(ValueError):
        StepFunction([0.5, 0.5], [1, 2])
    with pytest.raises(ValueError):
        StepFunction([0.1, 0.5], [2, 1])
    f = StepFunction([0.1, 0.5], [1, 1])
    g = StepFunction.from_dict(f.to_dict())
    assert np.array_equal(g.knots, f.knots) and np.array_equal(g.values, f.values)


def test_input_errors():
    with pytest.raises(ValueError, match="length"):
        fit_isotonic([0.1, 0.2], [1.0], SQ)
    with pytest.raises(ValueError):
        fit_isotonic([0.1, 1.2], [1.0, 2.0], SQ)
    with pytest.raises(ValueError):
        fit_isotonic([], [], SQ)


def test_poisson_zero_blocks_replaced_by_smallest_finite():
    us = [0.1, 0.2, 0.3, 0.4]
    ys = [0, 0, 1, 3]
    f = fit_isotonic(us, ys, LossSpec.poisson())
    assert np.all(np.isfinite(f.values))
    # blocks: {0,0} -> -inf, {1} -> 0, {3} -> log 3; the sentinel takes the value 0
    np.testing.assert_allclose(f.values, [0.0, 0.0, 0.0, math.log(3)])


def test_poisson_all_zero_is_an_error():
    with pytest.raises(FitError):
        fit_isotonic([0.1, 0.5], [0, 0], LossSpec.poisson())


def test_poisson_pooling_absorbs_zero_block_on_the_right():
    f = fit_isotonic([0.1, 0.9], [2, 0], LossSpec.poisson())
    np.testing.assert_allclose(f.values, [0.0, 0.0])


LOSSES = [LossSpec.squared(), LossSpec.absolute(), LossSpec.pinball(0.25), LossSpec.huber(1.0)]


@pytest.mark.parametrize("spec", LOSSES, ids=lambda s: s.kind.value)
def test_matches_grid_oracle_small_instances(spec):
    rng = np.random.default_rng(10)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        us = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9, 1.0], size=n)
        ys = rng.integers(0, 6, size=n).astype(float)
        f = fit_isotonic(us, ys, spec)
        assert abs(isotonic_objective(f, us, ys, spec) - monotone_grid_min(us, ys, spec)) <= 1e-6


def test_fuzz_outputs_non_decreasing_for_every_loss():
    rng = np.random.default_rng(11)
    specs = LOSSES + [LossSpec.poisson(), LossSpec.cross_entropy(), LossSpec.pinball(0.9)]
    for i in range(10_000):
        spec = specs[i % len(specs)]
        n = int(rng.integers(1, 15))
        us = np.round(rng.random(n), 2)
        if spec.kind.value == "poisson":
            ys = rng.integers(0, 4, n).astype(float)
            if not ys.any():
                ys[0] = 1.0
        elif spec.kind.value == "cross_entropy":
            ys = rng.integers(0, 2, n).astype(float)
        else:
            ys = rng.normal(size=n)
        f = fit_isotonic(us, ys, spec)
        assert np.all(np.diff(f.values) >= 0)


def test_refit_on_fitted_values_is_idempotent():
    rng = np.random.default_rng(12)
    for _ in range(50):
        us = rng.random(30)
        ys = rng.normal(size=30) + 3 * us
        f = fit_isotonic(us, ys, SQ)
        fitted = eval_step(f, us)
        g = fit_isotonic(us, fitted, SQ)
        np.testing.assert_allclose(eval_step(g, us), fitted, atol=1e-10)


def test_squared_blocks_are_block_means():
    rng = np.random.default_rng(13)
    us = rng.random(200)
    ys = rng.normal(size=200) + us
    f = fit_isotonic(us, ys, SQ)
    fitted = eval_step(f, us)
    for v in np.unique(fitted):
        assert ys[fitted == v].mean() == pytest.approx(v, abs=1e-12)


def test_large_input_finishes():
    rng = np.random.default_rng(14)
    us = rng.random(20_000)
    ys = -us + rng.normal(size=us.size)
    f = fit_isotonic(us, ys, LossSpec.huber(1.0))
    assert np.all(np.diff(f.values) >= 0)
    assert float(np.mean(loss_value(LossSpec.huber(1.0), eval_step(f, us), ys))) > 0
