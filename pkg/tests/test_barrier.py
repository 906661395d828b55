import math

import numpy as np
import pytest

import oracles
from bandpolicy.barrier import (LOCAL_MAX, BracketError, barrier_solution, barrier_value, best_barrier,
                                critical_level_form, find_barrier_roots, no_reflection_residual,
                                no_reflection_threshold, no_reflection_value, smooth_fit_residual,
                                value_derivative_in_b, value_slope_sign)
from bandpolicy.model import CANONICAL, ModelParams, Side


def test_three_roots_match_oracle(roots):
    assert len(roots) == 3
    np.testing.assert_allclose([s.b for s in roots], oracles.ROOTS, atol=1e-9)
    assert tuple(s.classification for s in roots) == oracles.ROOT_SHAPES


def test_roots_are_c2(roots):
    for s in roots:
        left, right = (np.array(s.evaluate(s.b, side)) for side in ("left", "right"))
        np.testing.assert_allclose(left, right, rtol=0, atol=1e-8)


def test_first_barrier_coefficients(roots):
    s = roots[0]
    assert s.A == pytest.approx(oracles.A1, rel=1e-9)
    assert s.B == pytest.approx(oracles.B1, rel=1e-9)
    for x, val in oracles.V_B1.items():
        assert float(s.value(x)) == pytest.approx(val, rel=1e-10)


def test_value_is_c1_at_any_barrier(params, yld):
    for b in (2.0, 4.5, 7.0, 12.0):
        s = barrier_solution(b, params, yld)
        (v0, d0, _), (v1, d1, _) = s.evaluate(b, "left"), s.evaluate(b, "right")
        assert float(v0) == pytest.approx(float(v1), rel=1e-13)
        assert float(d0) == pytest.approx(float(d1), rel=1e-12)


def test_value_slope_in_b_vanishes_at_roots(roots, params, yld):
    x = np.array([2.0, 5.0, 9.0])
    h = 1e-5
    for s in roots:
        fd = (barrier_value(s.b + h, x, params, yld) - barrier_value(s.b - h, x, params, yld)) / (2 * h)
        assert np.max(np.abs(fd)) < 1e-6
        assert np.max(np.abs(value_derivative_in_b(s.b, x, params, yld))) < 1e-9


def test_analytic_b_derivative_matches_fd(params, yld):
    x = np.array([1.0, 3.0, 6.5, 10.0])
    h = 1e-6
    for b in (3.0, 5.0, 6.9, 9.5):
        fd = (barrier_value(b + h, x, params, yld) - barrier_value(b - h, x, params, yld)) / (2 * h)
        np.testing.assert_allclose(value_derivative_in_b(b, x, params, yld), fd, rtol=1e-5, atol=1e-8)


def test_slope_sign_independent_of_x(params, yld):
    for b in (3.0, 5.0, 7.0, 9.0):
        d = value_derivative_in_b(b, np.array([0.5, 2.0, 5.0, 9.0, 15.0]), params, yld)
        assert np.all(np.sign(d) == value_slope_sign(b, params, yld))


def test_best_barrier_is_first_root_for_any_x_eval(roots, params, yld):
    for x_eval in (0.5, 2.0, 5.0, 9.0, 30.0):
        assert best_barrier(roots, x_eval, params, yld).b == roots[0].b


def test_best_barrier_empty():
    with pytest.raises(ValueError):
        best_barrier([], 5.0, None, CANONICAL)


def test_degenerate_barrier(params, yld):
    s = barrier_solution(0.7, params, yld)
    assert s.degenerate and s.A == 0 and s.B == 0
    assert float(s.value(0.3)) == 0
    assert float(s.value(3.0)) == pytest.approx(CANONICAL.integral(0.7, 3.0))


def test_barrier_rejects_nonpositive(params, yld):
    with pytest.raises(ValueError):
        barrier_solution(0.0, params, yld)


def test_critical_level_form_shares_zeros(roots, params):
    for s in roots:
        assert abs(float(critical_level_form(s.b, params))) < 1e-7
    b = np.linspace(1.5, 20, 200)
    assert np.all(np.sign(critical_level_form(b, params)) == np.sign(smooth_fit_residual(b, params, CANONICAL)))


def test_scan_range_validation(params, yld):
    with pytest.raises(ValueError):
        find_barrier_roots(params, yld, lo=0.5)
    with pytest.raises(ValueError):
        find_barrier_roots(params, yld, lo=3.0, hi=2.0)


def test_single_root_regimes():
    p = ModelParams(*oracles.DRIFTLESS)
    roots = find_barrier_roots(p, CANONICAL)
    assert len(roots) == 1 and roots[0].classification == LOCAL_MAX
    p = ModelParams(oracles.MU - 0.01, oracles.SIGMA, oracles.R)
    assert len(find_barrier_roots(p, CANONICAL)) == 1


def test_large_b_residual_finite(params, yld):
    r = smooth_fit_residual(np.array([50.0, 500.0, 5000.0]), params, yld)
    assert np.all(np.isfinite(r))


def test_no_reflection_driftless_closed_form():
    p = ModelParams(*oracles.DRIFTLESS)
    assert no_reflection_threshold(p, CANONICAL) == pytest.approx(oracles.NO_REFLECTION_DRIFTLESS, abs=1e-12)


def test_no_reflection_residual_monotone(params):
    b = np.linspace(1.0 + 1e-6, 200, 5000)
    res = no_reflection_residual(b, params, CANONICAL)
    assert np.all(np.diff(res) > 0)


def test_no_reflection_value_c2_at_threshold(params):
    b = no_reflection_threshold(params, CANONICAL)
    v = no_reflection_value(b, np.array([b - 1, b, b + 1]), params, CANONICAL)
    assert np.all(np.diff(v) > 0)
    from bandpolicy.barrier import NoReflectionValue
    nr = NoReflectionValue(b, params, CANONICAL)
    np.testing.assert_allclose(nr.evaluate(b, Side.LEFT), nr.evaluate(b, Side.RIGHT), atol=1e-9)


def test_no_reflection_bracket_error(params):
    with pytest.raises(BracketError):
        no_reflection_threshold(params, CANONICAL, hi=1.5)


def test_reflection_adds_value(params):
    x = np.linspace(0, 15, 31)
    b = no_reflection_threshold(params, CANONICAL)
    nr = no_reflection_value(b, x, params, CANONICAL)
    refl = barrier_value(oracles.ROOTS[0], x, params, CANONICAL)
    assert np.all(refl >= nr - 1e-9)
    assert math.isfinite(b) and b > 1
