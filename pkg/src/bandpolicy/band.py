"""Three-threshold band candidate.

The candidate value is, with ``b`` a smooth-fit root of the barrier problem,

    A*phi(x)                      on [0, b]
    B + int_b^x eta               on (b, theta]
    C1 e^{g+ x} + C2 e^{g- x}     on (theta, lambda]
    D + int_lambda^x eta          on (lambda, inf)

``(C1, C2, D, theta, lambda)`` solve five smoothness conditions: value and
slope match at ``theta`` (C^1 only), value, slope and curvature at ``lambda``.
The system is linear in ``(C1, C2, D)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .barrier import barrier_solution
from .model import ModelParams, Side, YieldFn, phi, phi_d1, phi_d2

DEFAULT_GUESS = (7.0, 1.0, 8.0, 6.0, 8.0)
TOL = 1e-9
MAX_ITER = 200
# Collapsed solutions with theta -> lambda satisfy the theta conditions to
# O((lambda - theta)^2), so a tiny residual alone does not certify a band.
MIN_SEPARATION = 1e-3


class BandSolveError(RuntimeError):
    pass


class NonConvergenceError(BandSolveError):
    pass


class OrderingViolationError(BandSolveError):
    def __init__(self, msg, u=None):
        super().__init__(msg)
        self.u = u


class SingularJacobianError(BandSolveError):
    pass


def _exp_terms(x: float, params: ModelParams):
    gp, gm = params.gammas
    return math.exp(gp * x), math.exp(gm * x)


def _h(C1: float, C2: float, x: float, params: ModelParams, order: int = 0) -> float:
    """``d^order/dx^order (C1 e^{g+ x} + C2 e^{g- x})``."""
    gp, gm = params.gammas
    ep, em = _exp_terms(x, params)
    return C1 * gp**order * ep + C2 * gm**order * em


def band_residual(u, b: float, params: ModelParams, yld: YieldFn) -> np.ndarray:
    C1, C2, D, theta, lam = (float(t) for t in u)
    bar = barrier_solution(b, params, yld)
    return np.array([
        _h(C1, C2, theta, params) - (bar.B + yld.integral(b, theta)),
        _h(C1, C2, theta, params, 1) - float(yld.eval(theta)),
        _h(C1, C2, lam, params) - D,
        _h(C1, C2, lam, params, 1) - float(yld.eval(lam)),
        _h(C1, C2, lam, params, 2) - float(yld.deriv1(lam)),
    ])


def band_jacobian(u, b: float, params: ModelParams, yld: YieldFn) -> np.ndarray:
    C1, C2, D, theta, lam = (float(t) for t in u)
    gp, gm = params.gammas
    tp, tm = _exp_terms(theta, params)
    lp, lm = _exp_terms(lam, params)
    J = np.zeros((5, 5))
    J[0, :2] = tp, tm
    J[1, :2] = gp * tp, gm * tm
    J[2, :2] = lp, lm
    J[3, :2] = gp * lp, gm * lm
    J[4, :2] = gp**2 * lp, gm**2 * lm
    J[2, 2] = -1.0
    J[0, 3] = _h(C1, C2, theta, params, 1) - float(yld.eval(theta))
    J[1, 3] = _h(C1, C2, theta, params, 2) - float(yld.deriv1(theta))
    J[2, 4] = _h(C1, C2, lam, params, 1)
    J[3, 4] = _h(C1, C2, lam, params, 2) - float(yld.deriv1(lam))
    J[4, 4] = _h(C1, C2, lam, params, 3) - float(yld.deriv2(lam))
    return J


def linear_fill(theta: float, lam: float, params: ModelParams, yld: YieldFn) -> np.ndarray:
    """Full 5-vector whose last three residuals vanish for the given thresholds."""
    gp, gm = params.gammas
    lp, lm = _exp_terms(lam, params)
    M = np.array([[gp * lp, gm * lm], [gp**2 * lp, gm**2 * lm]])
    C1, C2 = np.linalg.solve(M, [float(yld.eval(lam)), float(yld.deriv1(lam))])
    return np.array([C1, C2, C1 * lp + C2 * lm, theta, lam])


@dataclass(frozen=True)
class BandSolution:
    b: float
    theta: float
    lam: float
    A: float
    B: float
    C1: float
    C2: float
    D: float
    residual_norm: float
    params: ModelParams = field(repr=False)
    yld: YieldFn = field(repr=False)
    iterations: int = 0

    @property
    def kinks(self) -> tuple[float, ...]:
        return (self.b, self.theta, self.lam)

    @property
    def unknowns(self) -> np.ndarray:
        return np.array([self.C1, self.C2, self.D, self.theta, self.lam])

    def _branch(self, x, side: Side):
        if side is Side.RIGHT:
            return np.searchsorted(np.array(self.kinks), x, side="right")
        return np.searchsorted(np.array(self.kinks), x, side="left")

    def evaluate(self, x, side: Side | str = Side.RIGHT):
        """``(v, v', v'')`` branchwise; at a threshold the side picks the branch."""
        side = Side.coerce(side)
        x = np.asarray(x, dtype=float)
        br = self._branch(x, side)
        p, yld = self.params, self.yld
        gp, gm = p.gammas
        v = np.empty(x.shape)
        d1 = np.empty(x.shape)
        d2 = np.empty(x.shape)

        m = br == 0
        v[m] = self.A * phi(x[m], p)
        d1[m] = self.A * phi_d1(x[m], p)
        d2[m] = self.A * phi_d2(x[m], p)
        for k, (lo, base) in ((1, (self.b, self.B)), (3, (self.lam, self.D))):
            m = br == k
            v[m] = base + yld.integral_from(lo, x[m])
            d1[m] = yld.eval(x[m])
            d2[m] = yld.deriv1(x[m], side)
        m = br == 2
        ep, em = np.exp(gp * x[m]), np.exp(gm * x[m])
        v[m] = self.C1 * ep + self.C2 * em
        d1[m] = self.C1 * gp * ep + self.C2 * gm * em
        d2[m] = self.C1 * gp**2 * ep + self.C2 * gm**2 * em
        return v, d1, d2

    def value(self, x):
        return self.evaluate(x)[0]

    def one_sided(self, x: float):
        """Left and right ``(v, v', v'')`` at a single point."""
        left = tuple(float(t) for t in self.evaluate(x, Side.LEFT))
        right = tuple(float(t) for t in self.evaluate(x, Side.RIGHT))
        return left, right

    @property
    def theta_curvature_gap(self) -> float:
        """``v''(theta+) - v''(theta-)``; nonzero because only C^1 is imposed there."""
        left, right = self.one_sided(self.theta)
        return right[2] - left[2]

    def residuals(self) -> np.ndarray:
        return band_residual(self.unknowns, self.b, self.params, self.yld)

    def report(self) -> dict:
        res = self.residuals()
        return {
            "thresholds": {"b": self.b, "theta": self.theta, "lambda": self.lam},
            "coefficients": {"A": self.A, "B": self.B, "C1": self.C1, "C2": self.C2, "D": self.D},
            "residuals": [float(t) for t in res],
            "residual_max_norm": float(np.max(np.abs(res))),
            "newton_iterations": self.iterations,
            "theta_curvature_gap": self.theta_curvature_gap,
        }


def solve_band(b: float, params: ModelParams, yld: YieldFn, initial_guess=DEFAULT_GUESS,
               tol: float = TOL, max_iter: int = MAX_ITER,
               min_separation: float = MIN_SEPARATION) -> BandSolution:
    """Damped Newton on the five smoothness conditions.

    Steps are halved until the residual max-norm decreases and both
    thresholds stay above the yield's support threshold.  A converged point
    must also satisfy ``b < theta < lambda`` with gaps of at least
    ``min_separation`` relative to the larger threshold.
    """
    u = np.asarray(initial_guess, dtype=float)
    if u.shape != (5,) or not np.all(np.isfinite(u)):
        raise ValueError("initial guess must be a finite 5-vector (C1, C2, D, theta, lambda)")
    xs = yld.support_threshold
    if u[3] <= xs or u[4] <= xs:
        raise ValueError("initial thresholds must exceed the support threshold")
    bar = barrier_solution(b, params, yld)

    def resid(w):
        return band_residual(w, b, params, yld)

    def damped_step(u, f, norm, it):
        J = band_jacobian(u, b, params, yld)
        try:
            if np.linalg.cond(J) > 1e15:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}, u={u}") from None
        t = 1.0
        while t >= 1e-12:
            cand = u + t * step
            if cand[3] > xs and cand[4] > xs:
                fc = resid(cand)
                nc = float(np.max(np.abs(fc)))
                if np.isfinite(nc) and nc < norm:
                    return cand, fc, nc
            t *= 0.5
        return None

    f = resid(u)
    norm = float(np.max(np.abs(f)))
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise NonConvergenceError(f"no convergence after {max_iter} iterations (residual {norm:.3e})")
        nxt = damped_step(u, f, norm, it)
        if nxt is None:
            raise NonConvergenceError(f"line search stalled at iteration {it} (residual {norm:.3e})")
        u, f, norm = nxt
        it += 1
    # theta is pinned only through the curvature gap there, so polish to
    # rounding level rather than stopping at the tolerance
    for _ in range(4):
        try:
            nxt = damped_step(u, f, norm, it)
        except SingularJacobianError:
            break
        if nxt is None:
            break
        u, f, norm = nxt
        it += 1

    C1, C2, D, theta, lam = (float(t) for t in u)
    if not (theta - b > min_separation * theta and lam - theta > min_separation * lam):
        raise OrderingViolationError(
            f"converged to theta={theta:.9g}, lambda={lam:.9g}, violating b={b:.9g} < theta < lambda", u)
    return BandSolution(b, theta, lam, bar.A, bar.B, C1, C2, D, norm, params, yld, iterations=it)


def multistart_band(b: float, params: ModelParams, yld: YieldFn, theta_grid=None, lam_grid=None,
                    dedup_tol: float = 1e-6, **kw) -> list[BandSolution]:
    """Run :func:`solve_band` from a grid of threshold guesses; distinct solutions only."""
    if theta_grid is None:
        theta_grid = np.linspace(b + 0.1, b + 6.0, 12)
    if lam_grid is None:
        lam_grid = np.linspace(b + 0.5, b + 12.0, 12)
    found: list[BandSolution] = []
    for theta, lam in itertools.product(theta_grid, lam_grid):
        if lam <= theta:
            continue
        try:
            guess = linear_fill(theta, lam, params, yld)
            sol = solve_band(b, params, yld, guess, **kw)
        except (BandSolveError, np.linalg.LinAlgError, ValueError, OverflowError):
            continue
        if all(max(abs(sol.theta - s.theta), abs(sol.lam - s.lam)) > dedup_tol for s in found):
            found.append(sol)
    return sorted(found, key=lambda s: (s.theta, s.lam))


def band_value(sol: BandSolution, x, side: Side | str = Side.RIGHT):
    """``(v, v', v'')`` of the band candidate at ``x``, one-sided at thresholds."""
    return sol.evaluate(x, side)
