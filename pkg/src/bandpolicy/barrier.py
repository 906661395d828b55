"""Single-barrier policies: closed-form values and smooth-fit thresholds.

A barrier policy with threshold ``b`` reflects the state downward at ``b``.
Its value is ``A*phi(x)`` below ``b`` and ``B + int_b^x eta`` above, with
``A = eta(b)/phi'(b)`` and ``B = A*phi(b)``.  The thresholds at which this is
C^2 are the critical points of ``b -> V_b(x)`` for every fixed ``x``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ModelParams,
    ParameterError,
    Side,
    YieldFn,
    phi,
    phi_d1,
    phi_d2,
)

LOCAL_MAX = "local_max"
LOCAL_MIN = "local_min"
SADDLE = "saddle"

DEFAULT_SCAN = (1.0 + 1e-6, 50.0, 1e-3)
BISECT_WIDTH = 1e-10


class BracketError(ValueError):
    """The requested root is not bracketed by the search interval."""


@dataclass(frozen=True)
class BarrierSolution:
    b: float
    A: float
    B: float
    params: ModelParams = field(repr=False)
    yld: YieldFn = field(repr=False)
    classification: str | None = None
    residual: float = math.nan
    degenerate: bool = False

    @property
    def kinks(self) -> tuple[float, ...]:
        return (self.b,)

    def evaluate(self, x, side: Side | str = Side.RIGHT):
        """``(v, v', v'')`` at ``x``; at ``x == b`` the side picks the branch."""
        side = Side.coerce(side)
        x = np.asarray(x, dtype=float)
        below = x < self.b if side is Side.RIGHT else x <= self.b
        xl = np.where(below, x, 0.0)
        xr = np.where(below, self.b, x)
        v = np.where(below, self.A * phi(xl, self.params), self.B + self.yld.integral_from(self.b, xr))
        d1 = np.where(below, self.A * phi_d1(xl, self.params), self.yld.eval(xr))
        d2 = np.where(below, self.A * phi_d2(xl, self.params), self.yld.deriv1(xr, side))
        return v, d1, d2

    def value(self, x):
        return self.evaluate(x)[0]


def barrier_solution(b: float, params: ModelParams, yld: YieldFn) -> BarrierSolution:
    """Coefficients of the barrier value at threshold ``b``.

    For ``b`` at or below the yield's support threshold the marginal yield at
    the barrier is zero, so ``A = B = 0`` and the result is flagged
    ``degenerate`` instead of raising; sweeps keep going.
    """
    b = float(b)
    if not b > 0:
        raise ParameterError("barrier threshold must be > 0")
    if b <= yld.support_threshold:
        return BarrierSolution(b, 0.0, 0.0, params, yld, degenerate=True)
    A = float(yld.eval(b)) / float(phi_d1(b, params))
    return BarrierSolution(b, A, A * float(phi(b, params)), params, yld,
                           residual=float(smooth_fit_residual(b, params, yld)))


def barrier_value(b: float, x, params: ModelParams, yld: YieldFn):
    return barrier_solution(b, params, yld).value(x)


def _curvature_ratio(b, params: ModelParams):
    """``phi''(b) / phi'(b)`` in a form that does not overflow for large ``b``."""
    gp, gm = params.gammas
    z = (gm - gp) * np.asarray(b, dtype=float)
    return (gp - gm * np.exp(z)) / -np.expm1(z)


def smooth_fit_residual(b, params: ModelParams, yld: YieldFn):
    """``eta(b) phi''(b)/phi'(b) - eta'(b)``: left minus right ``v''`` at ``b``."""
    b = np.asarray(b, dtype=float)
    return yld.eval(b) * _curvature_ratio(b, params) - yld.deriv1(b)


def critical_level_form(b, params: ModelParams):
    """Canonical-yield rewrite: ``b^2 - b - phi'(b)/phi''(b)``.

    Same zeros as :func:`smooth_fit_residual` for ``eta = (1 - 1/x)^+``.
    """
    b = np.asarray(b, dtype=float)
    return b * b - b - phi_d1(b, params) / phi_d2(b, params)


def value_slope_sign(b, params: ModelParams, yld: YieldFn):
    """Sign of ``d V_b(x) / db``; independent of ``x`` and opposite to the residual."""
    return -np.sign(smooth_fit_residual(b, params, yld))


def value_derivative_in_b(b: float, x, params: ModelParams, yld: YieldFn):
    """Analytic ``d V_b(x) / db``."""
    x = np.asarray(x, dtype=float)
    p1 = float(phi_d1(b, params))
    core = (float(yld.deriv1(b)) * p1 - float(yld.eval(b)) * float(phi_d2(b, params))) / p1**2
    return np.where(x < b, phi(np.minimum(x, b), params), float(phi(b, params))) * core


def _bisect(f, lo: float, hi: float, flo: float, width: float = BISECT_WIDTH, max_iter: int = 200) -> float:
    for _ in range(max_iter):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _classify(left_sign: float, right_sign: float) -> str:
    """Classify from the sign of ``dV/db`` just left and right of a root."""
    if left_sign > 0 > right_sign:
        return LOCAL_MAX
    if left_sign < 0 < right_sign:
        return LOCAL_MIN
    return SADDLE


def find_barrier_roots(params: ModelParams, yld: YieldFn, lo: float = DEFAULT_SCAN[0],
                       hi: float = DEFAULT_SCAN[1], step: float = DEFAULT_SCAN[2]) -> list[BarrierSolution]:
    """All sign changes of the smooth-fit residual on ``[lo, hi]``, refined by bisection.

    Roots closer together than ``step`` can be missed; nothing detects that.
    """
    if not lo > yld.support_threshold:
        raise ValueError(f"scan must start above the support threshold {yld.support_threshold}")
    if not (step > 0 and hi > lo):
        raise ValueError("empty scan range")
    grid = np.arange(lo, hi + 0.5 * step, step)
    grid = grid[grid <= hi]
    res = smooth_fit_residual(grid, params, yld)
    f = lambda b: float(smooth_fit_residual(b, params, yld))
    sgn = np.where(np.isfinite(res), np.sign(res), np.nan)
    n = len(grid)

    roots = []
    exact = np.flatnonzero(sgn == 0.0)
    crossing = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    for i in sorted(set(exact.tolist()) | set(crossing.tolist())):
        if sgn[i] == 0.0:
            root = grid[i]
            left = -sgn[max(i - 1, 0)]
            right = -sgn[min(i + 1, n - 1)]
        else:
            root = _bisect(f, grid[i], grid[i + 1], res[i])
            left, right = -sgn[i], -sgn[i + 1]
        sol = barrier_solution(root, params, yld)
        roots.append(BarrierSolution(sol.b, sol.A, sol.B, params, yld,
                                     classification=_classify(left, right), residual=sol.residual))
    return roots


def best_barrier(roots: list[BarrierSolution], x_eval: float, params: ModelParams, yld: YieldFn) -> BarrierSolution:
    if not roots:
        raise ValueError("no candidate barriers")
    values = [float(barrier_value(s.b, x_eval, params, yld)) for s in roots]
    return roots[int(np.argmax(values))]


# ---------------------------------------------------------------------------
# the same problem without reflection at 0
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoReflectionValue:
    """Barrier value when the state may go negative (no regulator at 0)."""

    b: float
    params: ModelParams = field(repr=False)
    yld: YieldFn = field(repr=False)

    @property
    def kinks(self) -> tuple[float, ...]:
        return (self.b,)

    def evaluate(self, x, side: Side | str = Side.RIGHT):
        side = Side.coerce(side)
        x = np.asarray(x, dtype=float)
        gp = self.params.gamma_plus
        eb = float(self.yld.eval(self.b))
        below = x < self.b if side is Side.RIGHT else x <= self.b
        expo = np.exp(gp * (np.minimum(x, self.b) - self.b))
        xr = np.where(below, self.b, x)
        v = np.where(below, eb / gp * expo, eb / gp + self.yld.integral_from(self.b, xr))
        d1 = np.where(below, eb * expo, self.yld.eval(xr))
        d2 = np.where(below, gp * eb * expo, self.yld.deriv1(xr, side))
        return v, d1, d2

    def value(self, x):
        return self.evaluate(x)[0]


def no_reflection_value(b: float, x, params: ModelParams, yld: YieldFn):
    return NoReflectionValue(float(b), params, yld).value(x)


def no_reflection_residual(b, params: ModelParams, yld: YieldFn):
    return params.gamma_plus * yld.eval(b) - yld.deriv1(b)


def no_reflection_threshold(params: ModelParams, yld: YieldFn, hi: float = 1e3, eps: float = 1e-9) -> float:
    """Unique root of ``gamma_plus * eta(b) = eta'(b)`` above the support threshold."""
    lo = yld.support_threshold + eps
    f = lambda b: float(no_reflection_residual(b, params, yld))
    flo, fhi = f(lo), f(hi)
    if not (flo < 0 < fhi):
        raise BracketError(f"no sign change of the no-reflection residual on [{lo}, {hi}]; widen the range")
    return _bisect(f, lo, hi, flo, width=1e-13)
