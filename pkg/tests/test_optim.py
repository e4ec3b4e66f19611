import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgpo import autodiff as ad
from dgpo.nn import ModelParams, value_and_grad
from dgpo.optim import OptimizerState, adam_step, ema_update, finite_diff_check
from helpers import SMALL, small_params


def test_first_adam_step_moves_by_lr_times_sign(params):
    before = params.values.copy()
    g = np.linspace(-1, 1, params.values.size)
    g[g == 0] = 0.5
    opt = OptimizerState.for_params(params, 1e-3)
    adam_step(opt, params, g)
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(params.values - before, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_matches_hand_recurrence():
    p = ModelParams(SMALL, np.zeros(SMALL.n_params()))
    opt = OptimizerState.for_params(p, 0.1)
    m = v = 0.0
    x = 0.0
    for k, gk in enumerate([0.5, -0.2, 0.3], 1):
        adam_step(opt, p, np.full(p.values.size, gk))
        m = 0.9 * m + 0.1 * gk
        v = 0.999 * v + 0.001 * gk * gk
        x -= 0.1 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    assert p.values[0] == pytest.approx(x, rel=1e-12)


def test_sgd_step(params):
    before = params.values.copy()
    opt = OptimizerState.for_params(params, 0.5, mode="sgd")
    adam_step(opt, params, np.ones_like(before))
    np.testing.assert_allclose(params.values, before - 0.5)


def test_non_finite_gradient_rejected(params):
    g = np.zeros(params.values.size)
    g[7] = np.nan
    with pytest.raises(FloatingPointError, match="first index 7"):
        adam_step(OptimizerState.for_params(params, 1e-3), params, g)


def test_unknown_optimizer_rejected():
    with pytest.raises(ValueError):
        OptimizerState(lr=1.0, mode="rmsprop")


def test_ema_endpoints():
    a, b = small_params(0), small_params(1)
    np.testing.assert_array_equal(ema_update(a, b, 0.0).values, b.values)
    np.testing.assert_array_equal(ema_update(a, b, 1.0).values, a.values)
    with pytest.raises(ValueError):
        ema_update(a, b, 1.5)


@settings(max_examples=50, deadline=None)
@given(mu=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
def test_ema_is_the_convex_combination(mu, seed):
    a, b = small_params(seed), small_params(seed + 1)
    out = ema_update(a, b, mu).values
    np.testing.assert_allclose(out, mu * a.values + (1 - mu) * b.values, rtol=1e-12, atol=1e-15)
    # affine: the update commutes with a shared shift
    shifted = ema_update(a.with_values(a.values + 3.0), b.with_values(b.values + 3.0), mu).values
    np.testing.assert_allclose(shifted, out + 3.0, rtol=1e-12, atol=1e-12)


def test_finite_diff_check_on_quadratic(params):
    w = np.arange(params.values.size, dtype=float) / params.values.size
    report = finite_diff_check(lambda p: float(np.sum(w * p.values**2)), params, analytic=2 * w * params.values)
    assert report.passed


def test_finite_diff_check_flags_wrong_gradient(params):
    report = finite_diff_check(lambda p: float(np.sum(np.asarray(p.values) ** 2)), params,
                               analytic=np.zeros(params.values.size))
    assert not report.passed


def test_sgd_scalar_example():
    p = ModelParams(SMALL, np.ones(SMALL.n_params()))
    adam_step(OptimizerState.for_params(p, 0.1, mode="sgd"), p, np.full(p.values.size, 2.0))
    np.testing.assert_allclose(p.values, 0.8, rtol=0, atol=1e-15)


def test_sgd_contracts_to_quadratic_minimum():
    # f(p) = (p - 3)^2, p <- p - 0.2 (p - 3): error shrinks by 0.8 per step
    p = ModelParams(SMALL, np.zeros(SMALL.n_params()))
    opt = OptimizerState.for_params(p, 0.1, mode="sgd")
    for _ in range(100):
        adam_step(opt, p, 2.0 * (p.values - 3.0))
    assert np.max(np.abs(p.values - 3.0)) <= 1e-6
    assert opt.step == 100


def test_zero_gradient_keeps_params_and_decays_moments(params):
    before = params.values.copy()
    opt = OptimizerState.for_params(params, 1e-3)
    adam_step(opt, params, np.zeros_like(before))
    np.testing.assert_array_equal(params.values, before)

    opt.m[:] = 0.5
    opt.v[:] = 0.25
    adam_step(opt, params.copy(), np.zeros_like(before))
    np.testing.assert_allclose(opt.m, 0.45)
    np.testing.assert_allclose(opt.v, 0.25 * 0.999)


def test_ema_scalar_example():
    a = ModelParams(SMALL, np.ones(SMALL.n_params()))
    b = ModelParams(SMALL, np.zeros(SMALL.n_params()))
    np.testing.assert_allclose(ema_update(a, b, 0.3).values, 0.3)


@settings(max_examples=30, deadline=None)
@given(mu=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
def test_ema_is_additive(mu, seed):
    a, b, c, d = (small_params(seed + k) for k in range(4))
    lhs = ema_update(a, b, mu).values + ema_update(c, d, mu).values
    rhs = ema_update(a.with_values(a.values + c.values), b.with_values(b.values + d.values), mu).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_quadratic_gradient_is_params_and_check_is_tight(params):
    val, g = value_and_grad(lambda q: ad.total(ad.square(q.values)) * 0.5, params)
    np.testing.assert_allclose(g, params.values, rtol=1e-15)
    assert val == pytest.approx(0.5 * np.sum(params.values**2))
    report = finite_diff_check(lambda q: ad.total(ad.square(q.values)) * 0.5, params, tol=1e-8)
    assert report.passed, report


def test_constant_loss_has_zero_gradient(params):
    _, g = value_and_grad(lambda q: 2.5, params)
    assert not g.any()


def test_fault_injection_names_corrupted_entry(params):
    loss = lambda q: ad.total(ad.square(q.values)) * 0.5  # noqa: E731
    _, g = value_and_grad(loss, params)
    corrupted = g.copy()
    idx = int(np.argmax(np.abs(g))) // 2 + 3
    corrupted[idx] *= 2.0
    report = finite_diff_check(loss, params, analytic=corrupted)
    assert not report.passed
    assert report.worst_index == idx
