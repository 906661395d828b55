import numpy as np
import pytest

import oracles
from bandpolicy.barrier import NoReflectionValue, barrier_solution, no_reflection_threshold
from bandpolicy.model import CANONICAL, ModelParams, Side
from bandpolicy.verify import compare_policies, verification_grid, verify_hjb


class Zero:
    kinks = ()

    def evaluate(self, x, side=Side.RIGHT):
        z = np.zeros(np.shape(x))
        return z, z, z


def test_band_candidate_passes(band, params, yld):
    rep = verify_hjb(band, params, yld)
    assert rep.passed, rep.summary()
    assert rep.max_Lv_violation <= 1e-8 and rep.max_Mv_violation <= 1e-8
    assert rep.boundary_conditions_ok
    assert rep.kink_points == pytest.approx([band.b, band.theta, band.lam])
    assert rep.violation_rows() == []


def test_every_barrier_root_fails(roots, params, yld):
    for s in roots:
        rep = verify_hjb(s, params, yld)
        assert not rep.passed
        assert rep.max_Lv_violation > 1e-6 or rep.max_Mv_violation > 1e-6
        assert rep.violation_rows()


def test_first_barrier_fails_on_L_inside_band(roots, params, yld, band):
    rep = verify_hjb(roots[0], params, yld)
    assert band.theta < rep.argmax_Lv < band.lam
    assert rep.max_Mv_violation <= 1e-8


def test_zero_function_violates_M(params, yld):
    rep = verify_hjb(Zero(), params, yld)
    assert not rep.passed
    assert rep.max_Lv_violation == 0.0
    assert rep.max_Mv_violation == pytest.approx(1 - 1 / 20)
    assert rep.argmax_Mv == 20.0


def test_kinks_outside_grid_rejected(band, params, yld):
    with pytest.raises(ValueError):
        verify_hjb(band, params, yld, hi=6.0)


def test_unique_root_barrier_verifies():
    p = ModelParams(oracles.MU - 0.01, oracles.SIGMA, oracles.R)
    from bandpolicy.barrier import find_barrier_roots
    (s,) = find_barrier_roots(p, CANONICAL)
    assert verify_hjb(s, p, CANONICAL).passed


def test_non_root_barrier_fails(params, yld):
    assert not verify_hjb(barrier_solution(3.0, params, yld), params, yld).passed


def test_no_reflection_analog():
    p = ModelParams(*oracles.DRIFTLESS)
    b = no_reflection_threshold(p, CANONICAL)
    rep = verify_hjb(NoReflectionValue(b, p, CANONICAL), p, CANONICAL, lo=-10.0, hi=20.0, reflected=False)
    assert rep.passed and rep.derivative_at_origin is None


def test_grid_contains_kinks_and_endpoints():
    g = verification_grid(0.0, 1.0, 0.1, kinks=(0.55,), refine_step=1e-3, refine_width=0.01)
    assert g[0] == 0.0 and g[-1] == 1.0 and 0.55 in g
    assert np.all(np.diff(g) > 0)
    assert np.sum(np.abs(g - 0.55) <= 0.01 + 1e-12) == 21


def test_compare_policies(band, roots):
    grid = np.linspace(0, 20, 2001)
    cmp = compare_policies(band, roots[0], grid)
    assert 0 < cmp["max_rel_gap"] < 1e-4
    assert cmp["min_gap"] > -1e-10
    assert band.theta < cmp["argmax"] <= 20
    swapped = compare_policies(lambda x: np.ones_like(x), lambda x: 2 * np.ones_like(x), grid)
    assert swapped["max_gap"] == -1 and swapped["min_rel_gap"] == -0.5
