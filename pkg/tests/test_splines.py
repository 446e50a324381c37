import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gnhp.splines import PeriodicSplineBasis


def test_order_one_step_functions():
    b = PeriodicSplineBasis(4, 12.0, order=1)
    np.testing.assert_array_equal(b.evaluate(4.0), [0.0, 2.0, 0.0, 0.0])
    np.testing.assert_allclose(b.integral_over(0.0, 12.0), [6.0, 6.0, 6.0, 6.0])


def test_integral_examples():
    b = PeriodicSplineBasis(10, 12.0)
    np.testing.assert_array_equal(b.integral_over(0.0, 0.0), np.zeros(10))
    np.testing.assert_allclose(b.integral_over(0.0, 5 * 12.0), 5 * b.integral_over(0.0, 12.0), rtol=1e-13)
    with pytest.raises(ValueError):
        b.integral_over(2.0, 1.0)


def test_sup_examples():
    b = PeriodicSplineBasis(4, 12.0, order=1)
    assert b.sup_intensity(np.zeros(4)) == 0.0
    w = np.array([0.1, 0.4, 0.2, 0.3])
    assert b.sup_intensity(w) == pytest.approx(0.8)
    grid = np.linspace(0, 12, 10_000, endpoint=False)
    assert (b.evaluate(grid) @ w).max() <= 0.8 + 1e-12
    with pytest.raises(ValueError):
        b.sup_intensity(-w)


def test_constant_weights_give_constant_function():
    b = PeriodicSplineBasis(36, 12.0)
    c = 0.37
    w = np.full(36, c / np.sqrt(36))
    assert b.sup_intensity(w) == pytest.approx(c)
    grid = np.linspace(0, 24, 2001)
    np.testing.assert_allclose(b.evaluate(grid) @ w, c, rtol=1e-12)


def test_integral_matches_quadrature():
    rng = np.random.default_rng(0)
    b = PeriodicSplineBasis(8, 12.0, order=4)
    for _ in range(10):
        t0, t1 = np.sort(rng.uniform(0, 40, 2))
        j = rng.integers(8)
        brk = np.concatenate([[t0], [k * 1.5 for k in range(int(t0 / 1.5) + 1, int(t1 / 1.5) + 1)], [t1]])
        ref = sum(integrate.quad(lambda t: b.evaluate(t)[j], lo, hi, epsabs=1e-13, epsrel=1e-13)[0]
                  for lo, hi in zip(brk[:-1], brk[1:]) if hi > lo)
        assert b.integral_over(t0, t1)[j] == pytest.approx(ref, abs=1e-10)


def test_custom_knots():
    knots = [0.0, 1.0, 3.0, 6.0, 7.0, 12.0]
    b = PeriodicSplineBasis(5, 12.0, order=3, knots=knots)
    grid = np.linspace(0, 12, 500, endpoint=False)
    np.testing.assert_allclose(b.evaluate(grid).sum(axis=1), np.sqrt(5), rtol=1e-12)
    with pytest.raises(ValueError):
        PeriodicSplineBasis(5, 12.0, order=3, knots=[0, 2, 1, 6, 7, 12])


def test_invalid_construction():
    with pytest.raises(ValueError):
        PeriodicSplineBasis(3, 12.0, order=4)
    with pytest.raises(ValueError):
        PeriodicSplineBasis(6, -1.0)


def test_weight_floor_keeps_function_positive():
    b = PeriodicSplineBasis(12, 12.0)
    eps = 1e-8
    w = np.full(12, eps / np.sqrt(12))
    grid = np.linspace(0, 12, 3000)
    assert (b.evaluate(grid) @ w).min() >= eps * (1 - 1e-9)


@settings(max_examples=50, deadline=None)
@given(order=st.integers(1, 5), extra=st.integers(0, 10), t=st.floats(0.0, 500.0))
def test_partition_periodicity_support(order, extra, t):
    n = order + extra
    b = PeriodicSplineBasis(n, 12.0, order=order)
    x = b.evaluate(t)
    assert x.sum() == pytest.approx(np.sqrt(n), rel=1e-12)
    np.testing.assert_allclose(b.evaluate(t + 12.0), x, atol=1e-12)
    assert np.count_nonzero(x > 1e-14) <= order
    assert np.all(x >= -1e-15)
