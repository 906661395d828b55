import math

import numpy as np
import pytest

import oracles
from bandpolicy.model import (CANONICAL, AssumptionError, ModelParams, ParameterError, Side, YieldFn,
                              apply_L, apply_M, check_assumption, count_sign_changes, gamma_roots,
                              liu_uniqueness_bound, phi, phi_d1, phi_d2, phi_d3, structural_sign_changes,
                              table_yield)


class Scaled:
    """``c * phi`` as a value function."""

    kinks = ()

    def __init__(self, c, params):
        self.c, self.params = c, params

    def evaluate(self, x, side=Side.RIGHT):
        x = np.asarray(x, dtype=float)
        p = self.params
        return self.c * phi(x, p), self.c * phi_d1(x, p), self.c * phi_d2(x, p)


class Const:
    kinks = ()

    def __init__(self, c):
        self.c = c

    def evaluate(self, x, side=Side.RIGHT):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape, self.c), np.zeros(x.shape), np.zeros(x.shape)


def test_gammas_match_oracle(params):
    gp, gm = gamma_roots(params)
    assert gp == pytest.approx(oracles.GAMMA_PLUS, rel=1e-13)
    assert gm == pytest.approx(oracles.GAMMA_MINUS, rel=1e-13)


def test_gammas_driftless():
    gp, gm = gamma_roots(ModelParams(*oracles.DRIFTLESS))
    assert (gp, gm) == pytest.approx(oracles.DRIFTLESS_GAMMAS, abs=1e-15)


def test_vieta_identities(params):
    gp, gm = params.gammas
    s2 = params.sigma**2
    assert gp * gm == pytest.approx(-2 * params.r / s2, rel=1e-12)
    assert gp + gm == pytest.approx(-2 * params.mu / s2, rel=1e-12)
    # with sigma^2 = 2 these read -r and -mu
    assert gp * gm == pytest.approx(-0.00520074, rel=1e-12)
    assert gp + gm == pytest.approx(-0.508378, rel=1e-12)


@pytest.mark.parametrize("kw", [dict(sigma=0.0), dict(sigma=-1.0), dict(r=0.0), dict(r=-0.1),
                                dict(mu=math.nan), dict(r=math.inf)])
def test_parameter_domain(kw):
    base = dict(mu=0.1, sigma=1.0, r=0.05)
    with pytest.raises(ParameterError):
        ModelParams(**{**base, **kw})


def test_phi_at_origin(params):
    gp, gm = params.gammas
    assert phi_d1(0.0, params) == 0.0
    assert phi(0.0, params) == pytest.approx(1 / gp - 1 / gm)
    assert phi(0.0, params) > 0


def test_phi_derivatives_finite_difference(params):
    x = np.linspace(0.5, 30, 12)
    h = 1e-5
    for f, df in ((phi, phi_d1), (phi_d1, phi_d2), (phi_d2, phi_d3)):
        fd = (f(x + h, params) - f(x - h, params)) / (2 * h)
        np.testing.assert_allclose(df(x, params), fd, rtol=1e-7)


def test_L_of_phi_vanishes(params):
    x = np.linspace(0, 50, 501)
    v = Scaled(3.7, params)
    Lv = apply_L(v, x, params)
    scale = 3.7 * np.maximum(phi(x, params), 1.0) * params.r
    assert np.max(np.abs(Lv) / scale) < 1e-10


def test_L_of_constant(params):
    assert apply_L(Const(2.5), np.array([0.3, 7.0]), params) == pytest.approx(-params.r * 2.5)


def test_M_zero_when_slope_is_eta(params):
    class Integral:
        kinks = ()

        def evaluate(self, x, side=Side.RIGHT):
            x = np.asarray(x, dtype=float)
            return CANONICAL.integral_from(1.0, x), CANONICAL.eval(x), CANONICAL.deriv1(x)

    x = np.linspace(0, 20, 201)
    assert np.max(np.abs(apply_M(Integral(), x, CANONICAL))) == 0.0


def test_canonical_yield_shape():
    x = np.linspace(0, 40, 4001)
    eta = CANONICAL.eval(x)
    assert np.all(eta[x <= 1] == 0)
    assert np.all((eta >= 0) & (eta <= 1))
    sup = x > 1
    assert np.all(np.diff(eta[sup]) > 0)
    assert np.all(CANONICAL.deriv2(x[sup]) < 0)
    np.testing.assert_allclose(CANONICAL.deriv1(x[sup]), 1 / x[sup] ** 2)
    np.testing.assert_allclose(CANONICAL.deriv2(x[sup]), -2 / x[sup] ** 3)


def test_canonical_one_sided_at_support():
    assert CANONICAL.deriv1(1.0, Side.LEFT) == 0.0
    assert CANONICAL.deriv1(1.0, Side.RIGHT) == 1.0
    assert CANONICAL.deriv2(1.0, "left") == 0.0
    assert CANONICAL.deriv2(1.0, "right") == -2.0


def test_canonical_integral_closed_form_matches_quadrature():
    generic = YieldFn(CANONICAL.eval_fn, CANONICAL.deriv1_fn, CANONICAL.deriv2_fn, 1.0)
    for a, b in ((1.0, 5.0), (0.2, 3.3), (4.18, 4.85), (7.0, 2.0)):
        assert generic.integral(a, b) == pytest.approx(CANONICAL.integral(a, b) if b >= a
                                                       else -CANONICAL.integral(b, a), abs=1e-10)
    x = np.array([5.0, 2.0, 9.0])
    np.testing.assert_allclose(generic.integral_from(2.0, x), CANONICAL.integral_from(2.0, x), atol=1e-10)


def test_table_yield_reproduces_canonical():
    xs = np.linspace(1.0, 30.0, 600)
    tab = table_yield(xs, 1 - 1 / xs)
    grid = np.linspace(1.5, 25, 300)
    # slopes are interpolated, so knots are matched to O(h^2 eta'')
    np.testing.assert_allclose(tab.eval(grid), CANONICAL.eval(grid), atol=1e-4)
    np.testing.assert_allclose(tab.deriv1(grid), CANONICAL.deriv1(grid), atol=2e-3)
    assert tab.support_threshold == 1.0
    # past the last knot the curve stays below 1 and increasing
    far = np.linspace(30, 500, 50)
    assert np.all(tab.eval(far) < 1) and np.all(np.diff(tab.eval(far)) > 0)


@pytest.mark.parametrize("x,y", [
    ([1, 2, 3], [0.1, 0.5, 0.6]),        # does not start at 0
    ([1, 2, 3], [0, 0.5, 1.0]),          # reaches 1
    ([1, 2, 3], [0, 0.5, 0.4]),          # decreasing
    ([1, 3, 2], [0, 0.5, 0.6]),          # knots out of order
    ([1, 2], [0, 0.5]),                  # too short
])
def test_table_yield_rejects_bad_tables(x, y):
    with pytest.raises(AssumptionError):
        table_yield(x, y)


def test_assumption_check_rejects_convex():
    with pytest.raises(AssumptionError):
        YieldFn(lambda x: np.minimum((x - 1) ** 2 / 100, 1.0), lambda x: (x - 1) / 50,
                lambda x: np.full(np.shape(x), 0.02), 1.0)
    check_assumption(CANONICAL)


def test_structural_sign_changes_reference(params):
    grid = np.arange(1.0 + 1e-3, 20.0 + 1e-9, 1e-3)
    assert structural_sign_changes(CANONICAL, params, grid) == 2


def test_structural_sign_changes_negative_case():
    grid = np.arange(1.0 + 1e-3, 20.0 + 1e-9, 1e-3)
    p = ModelParams(0.0, math.sqrt(2.0), 0.5)
    assert structural_sign_changes(CANONICAL, p, grid) == 0


def test_structural_constant_yield_stub():
    const = YieldFn(lambda x: np.full(np.shape(x), 0.3), lambda x: np.zeros(np.shape(x)),
                    lambda x: np.zeros(np.shape(x)), support_threshold=1e-9, validate=False)
    grid = np.linspace(0.1, 10, 100)
    assert structural_sign_changes(const, ModelParams(0.0, 1.0, 0.05), grid) == 0


def test_structural_rejects_unsorted_grid(params):
    with pytest.raises(ValueError):
        structural_sign_changes(CANONICAL, params, np.array([2.0, 1.5, 3.0]))


def test_count_sign_changes_skips_near_zero():
    assert count_sign_changes([1, 1e-13, -1, -1e-14, 2]) == 2
    assert count_sign_changes([0, 0, 0]) == 0
    assert count_sign_changes([-1, 0.0, -2]) == 0


def test_liu_bound_examples(params):
    assert liu_uniqueness_bound(params) is False
    for gp in (0.01, 0.2, 3.0):
        # mu = 0 gives gamma_- = -gamma_+ and the bound reads exp(-2 gamma_+) < 1
        r = gp**2
        assert liu_uniqueness_bound(ModelParams(0.0, math.sqrt(2.0), r))


def test_side_coercion():
    assert Side.coerce("left") is Side.LEFT
    assert Side.coerce(Side.RIGHT) is Side.RIGHT
    with pytest.raises(ValueError):
        Side.coerce("up")
