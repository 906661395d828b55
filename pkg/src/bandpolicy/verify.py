"""Grid certification of the variational inequalities.

A function ``v`` with ``v'(0) = 0``, an absolutely continuous derivative and
at most linear growth dominates every policy value if ``L v <= 0`` and
``M v <= 0`` on ``[0, inf)``.  :func:`verify_hjb` checks those two
inequalities on a grid, evaluating both one-sided limits at each kink.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import L_operator, ModelParams, Side, ValueFunction, YieldFn

DEFAULT_TOL = 1e-8


@dataclass
class VerificationReport:
    grid_spec: dict
    max_Lv_violation: float
    max_Mv_violation: float
    kink_points: list[float]
    passed: bool
    tol: float
    argmax_Lv: float
    argmax_Mv: float
    derivative_at_origin: float | None
    growth_ok: bool
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def boundary_conditions_ok(self) -> bool:
        """Boundary and growth audits, separate from the two inequalities."""
        origin_ok = self.derivative_at_origin is None or abs(self.derivative_at_origin) <= self.tol
        return origin_ok and self.growth_ok

    def summary(self) -> dict:
        return {
            "grid": dict(self.grid_spec),
            "tol": self.tol,
            "passed": self.passed,
            "max_Lv_violation": self.max_Lv_violation,
            "argmax_Lv": self.argmax_Lv,
            "max_Mv_violation": self.max_Mv_violation,
            "argmax_Mv": self.argmax_Mv,
            "kink_points": list(self.kink_points),
            "derivative_at_origin": self.derivative_at_origin,
            "growth_ok": self.growth_ok,
        }

    def violation_rows(self):
        """``(x, side, Lv, Mv)`` rows where either inequality fails."""
        s = self.samples
        bad = (s["Lv"] > self.tol) | (s["Mv"] > self.tol)
        return list(zip(s["x"][bad], s["side"][bad], s["Lv"][bad], s["Mv"][bad]))


def verification_grid(lo: float, hi: float, step: float, kinks=(), refine_step: float = 1e-6,
                      refine_width: float = 0.01) -> np.ndarray:
    n = int(np.floor((hi - lo) / step + 1e-9))
    pieces = [lo + step * np.arange(n + 1), [hi]]
    for k in kinks:
        m = int(round(refine_width / refine_step))
        pieces.append(k + refine_step * np.arange(-m, m + 1))
        pieces.append([k])
    grid = np.unique(np.concatenate(pieces))
    return grid[(grid >= lo) & (grid <= hi)]


def verify_hjb(v: ValueFunction, params: ModelParams, yld: YieldFn, lo: float = 0.0, hi: float = 20.0,
               step: float = 1e-3, tol: float = DEFAULT_TOL, refine_step: float = 1e-6,
               refine_width: float = 0.01, reflected: bool = True) -> VerificationReport:
    """Evaluate ``L v`` and ``M v`` on a refined grid and report the worst excursions.

    With ``reflected=False`` the origin condition is not audited and ``lo`` may
    be negative (the problem without the regulator at 0).
    """
    kinks = sorted(float(k) for k in getattr(v, "kinks", ()))
    if kinks and (kinks[-1] > hi or kinks[0] < lo):
        raise ValueError(f"grid [{lo}, {hi}] does not cover the kinks {kinks}")
    special = kinks + [yld.support_threshold]
    special = [k for k in special if lo <= k <= hi]
    grid = verification_grid(lo, hi, step, special, refine_step, refine_width)

    xs, sides, Lv, Mv, D1 = [], [], [], [], []
    for side in (Side.RIGHT, Side.LEFT):
        pts = grid if side is Side.RIGHT else np.array(special, dtype=float)
        if pts.size == 0:
            continue
        val, d1, d2 = v.evaluate(pts, side)
        xs.append(pts)
        sides.append(np.full(pts.shape, side.value))
        Lv.append(L_operator(val, d1, d2, params))
        Mv.append(yld.eval(pts) - d1)
        D1.append(d1)
    x = np.concatenate(xs)
    side_arr = np.concatenate(sides)
    Lv = np.concatenate(Lv)
    Mv = np.concatenate(Mv)
    d1_all = np.concatenate(D1)

    iL, iM = int(np.argmax(Lv)), int(np.argmax(Mv))
    max_L = max(0.0, float(Lv[iL]))
    max_M = max(0.0, float(Mv[iM]))

    origin = None
    if reflected:
        origin = float(v.evaluate(np.array([0.0]), Side.RIGHT)[1][0])
    # linear growth: v' stays bounded by sup eta = 1 beyond the last threshold
    tail = x >= (kinks[-1] if kinks else lo)
    growth_ok = bool(np.all(np.isfinite(d1_all)) and np.all(d1_all[tail] <= 1.0 + tol))

    order = np.lexsort((side_arr, x))
    return VerificationReport(
        grid_spec={"lo": lo, "hi": hi, "step": step, "refine_step": refine_step, "refine_width": refine_width},
        max_Lv_violation=max_L,
        max_Mv_violation=max_M,
        kink_points=kinks,
        passed=max_L <= tol and max_M <= tol,
        tol=tol,
        argmax_Lv=float(x[iL]),
        argmax_Mv=float(x[iM]),
        derivative_at_origin=origin,
        growth_ok=growth_ok,
        samples={"x": x[order], "side": side_arr[order], "Lv": Lv[order], "Mv": Mv[order]},
    )


def _values(v, grid):
    if hasattr(v, "evaluate"):
        return np.asarray(v.evaluate(grid)[0], dtype=float)
    return np.asarray(v(grid), dtype=float)


def compare_policies(v1, v2, grid) -> dict:
    """Pointwise statistics of ``v1 - v2`` (value functions or plain callables)."""
    grid = np.asarray(grid, dtype=float)
    a, b = _values(v1, grid), _values(v2, grid)
    gap = a - b
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(b != 0, gap / np.abs(b), 0.0)
    i = int(np.argmax(gap))
    return {
        "max_gap": float(gap[i]),
        "min_gap": float(np.min(gap)),
        "max_abs_gap": float(np.max(np.abs(gap))),
        "max_rel_gap": float(np.max(rel)),
        "min_rel_gap": float(np.min(rel)),
        "argmax": float(grid[i]),
    }
