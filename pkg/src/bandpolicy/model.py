"""Problem primitives for drifted Brownian motion reflected at the origin.

The controlled state is ``X_t = x + mu*t + sigma*W_t - xi_t + L_t`` where ``xi``
is the (singular) control and ``L`` the reflection at 0.  Everything here is
immutable: parameters, the marginal yield, the homogeneous solution ``phi`` and
the two operators used by the verification step,

    L v = -r v + mu v' + (sigma^2 / 2) v''        (generator, discounted)
    M v = eta - v'                                (gain from exerting control)
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import integrate, interpolate


class ParameterError(ValueError):
    """Raised for parameters outside the model's domain."""


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @classmethod
    def coerce(cls, side: "Side | str") -> "Side":
        return side if isinstance(side, cls) else cls(str(side).lower())


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Drift ``mu``, volatility ``sigma`` and discount rate ``r``."""

    mu: float
    sigma: float
    r: float

    def __post_init__(self):
        for name in ("mu", "sigma", "r"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.r <= 0:
            raise ParameterError(f"r must be > 0, got {self.r}")

    @cached_property
    def gammas(self) -> tuple[float, float]:
        return gamma_roots(self)

    @property
    def gamma_plus(self) -> float:
        return self.gammas[0]

    @property
    def gamma_minus(self) -> float:
        return self.gammas[1]

    def replace(self, **changes) -> "ModelParams":
        data = {"mu": self.mu, "sigma": self.sigma, "r": self.r}
        data.update(changes)
        return ModelParams(**data)


REFERENCE_PARAMS = ModelParams(mu=0.508378, sigma=math.sqrt(2.0), r=0.00520074)


def gamma_roots(params: ModelParams) -> tuple[float, float]:
    """Roots of ``(sigma^2/2) g^2 + mu g - r = 0`` as ``(gamma_plus, gamma_minus)``.

    The small root is computed from Vieta's product to avoid cancellation
    when ``mu`` dominates ``r * sigma^2``.
    """
    mu, sigma, r = params.mu, params.sigma, params.r
    if sigma <= 0 or r <= 0:
        raise ParameterError("gamma_roots needs sigma > 0 and r > 0")
    s2 = sigma * sigma
    disc = math.sqrt(mu * mu + 2.0 * r * s2)
    # product of the roots is -2r/sigma^2
    if mu >= 0:
        g_minus = (-mu - disc) / s2
        g_plus = (-2.0 * r / s2) / g_minus
    else:
        g_plus = (-mu + disc) / s2
        g_minus = (-2.0 * r / s2) / g_plus
    return g_plus, g_minus


def phi(x, params: ModelParams):
    """Increasing solution of ``L v = 0`` with ``phi'(0) = 0``."""
    gp, gm = params.gammas
    x = np.asarray(x, dtype=float)
    return np.exp(gp * x) / gp - np.exp(gm * x) / gm


def phi_d1(x, params: ModelParams):
    gp, gm = params.gammas
    x = np.asarray(x, dtype=float)
    return np.exp(gp * x) - np.exp(gm * x)


def phi_d2(x, params: ModelParams):
    gp, gm = params.gammas
    x = np.asarray(x, dtype=float)
    return gp * np.exp(gp * x) - gm * np.exp(gm * x)


def phi_d3(x, params: ModelParams):
    gp, gm = params.gammas
    x = np.asarray(x, dtype=float)
    return gp * gp * np.exp(gp * x) - gm * gm * np.exp(gm * x)


# ---------------------------------------------------------------------------
# marginal yield
# ---------------------------------------------------------------------------

class AssumptionError(ValueError):
    """A yield function failed the sampled check of monotonicity/concavity."""


@dataclass(frozen=True)
class YieldFn:
    """Marginal yield ``eta`` with derivatives and its support threshold ``x*``.

    ``eta`` vanishes on ``[0, x*]`` and is increasing, concave and bounded by 1
    beyond it.  ``integral(a, b)`` is ``int_a^b eta``; subclasses override it
    with a closed form where one exists.
    """

    eval_fn: Callable
    deriv1_fn: Callable
    deriv2_fn: Callable
    support_threshold: float
    name: str = "custom"
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.validate:
            check_assumption(self)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.support_threshold, self.eval_fn(np.maximum(x, self.support_threshold)), 0.0)

    def deriv1(self, x, side: Side | str = Side.RIGHT):
        return self._deriv(self.deriv1_fn, x, side)

    def deriv2(self, x, side: Side | str = Side.RIGHT):
        return self._deriv(self.deriv2_fn, x, side)

    def _deriv(self, fn, x, side):
        side = Side.coerce(side)
        x = np.asarray(x, dtype=float)
        xs = self.support_threshold
        # at x* the left derivative belongs to the zero branch
        inside = x >= xs if side is Side.RIGHT else x > xs
        return np.where(inside, fn(np.maximum(x, xs)), 0.0)

    def integral(self, a, b):
        """Signed ``int_a^b eta(u) du`` (scalar arguments)."""
        a, b = float(a), float(b)
        if b < a:
            return -self.integral(b, a)
        a = max(a, self.support_threshold)
        if b <= a:
            return 0.0
        val, _ = integrate.quad(lambda u: float(self.eval(u)), a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
        return val

    def integral_from(self, a: float, x):
        """Vectorised ``int_a^x eta`` over an array of upper limits."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        order = np.argsort(flat)
        knots = np.concatenate(([a], flat[order]))
        pieces = np.array([self.integral(lo, hi) for lo, hi in zip(knots[:-1], knots[1:])])
        out = np.empty_like(flat)
        out[order] = np.cumsum(pieces)
        return out.reshape(x.shape)

    @property
    def is_canonical(self) -> bool:
        return False


class CanonicalYield(YieldFn):
    """``eta(x) = (1 - 1/x)^+`` with ``x* = 1``."""

    def __init__(self):
        super().__init__(
            eval_fn=lambda x: 1.0 - 1.0 / x,
            deriv1_fn=lambda x: 1.0 / x**2,
            deriv2_fn=lambda x: -2.0 / x**3,
            support_threshold=1.0,
            name="canonical",
            validate=False,
        )

    def integral(self, a, b):
        a = max(float(a), 1.0)
        b = max(float(b), 1.0)
        return (b - a) - math.log(b / a)

    def integral_from(self, a: float, x):
        a = max(float(a), 1.0)
        x = np.maximum(np.asarray(x, dtype=float), 1.0)
        return (x - a) - np.log(x / a)

    @property
    def is_canonical(self) -> bool:
        return True


CANONICAL = CanonicalYield()


def table_yield(x: Sequence[float], y: Sequence[float], name: str = "table") -> YieldFn:
    """Yield from tabulated points, increasing and concave by construction.

    The secant slopes of the table must be positive and nonincreasing.  They
    are interpolated (at interval midpoints, held flat at both ends) by a
    monotone PCHIP curve ``eta'``, and ``eta`` is its antiderivative from the
    first knot, so interior knots are matched to O(h^2) rather than exactly.
    Past the last knot the curve continues as
    ``y_n + (s/k)(1 - exp(-k (u - x_n)))`` with ``k = s / (1 - y_n)``:
    C^1 at the knot, concave, and tending to 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or len(x) < 3:
        raise AssumptionError("yield table needs matching 1-d x, y with >= 3 points")
    if np.any(np.diff(x) <= 0):
        raise AssumptionError("yield table x must be strictly increasing")
    if abs(y[0]) > 1e-12:
        raise AssumptionError("yield table must start at eta = 0 (the support threshold)")
    if not y[-1] < 1.0:
        raise AssumptionError("yield table must stay below 1")
    sec = np.diff(y) / np.diff(x)
    if np.any(sec <= 0):
        raise AssumptionError("yield table must be strictly increasing")
    if np.any(np.diff(sec) > 1e-12 * np.max(sec)):
        raise AssumptionError("yield table must be concave (nonincreasing secant slopes)")
    nodes = np.concatenate([[x[0]], 0.5 * (x[:-1] + x[1:]), [x[-1]]])
    slopes = np.concatenate([[sec[0]], sec, [sec[-1]]])
    d1 = interpolate.PchipInterpolator(nodes, slopes, extrapolate=False)
    d2 = d1.derivative()
    f0 = d1.antiderivative()
    x_first, x_last = float(x[0]), float(x[-1])
    y_last = float(f0(x_last))
    if not y_last < 1.0:
        raise AssumptionError("interpolated yield reaches 1 at the last knot")
    slope = float(sec[-1])
    k = slope / (1.0 - y_last)

    def inside(u):
        return np.clip(u, x_first, x_last)

    def f(u):
        u = np.asarray(u, dtype=float)
        tail = y_last + (slope / k) * -np.expm1(-k * np.maximum(u - x_last, 0.0))
        body = np.where(u <= x_first, 0.0, f0(inside(u)))
        return np.where(u <= x_last, body, tail)

    def f1(u):
        u = np.asarray(u, dtype=float)
        tail = slope * np.exp(-k * np.maximum(u - x_last, 0.0))
        body = np.where(u <= x_first, 0.0, d1(inside(u)))
        return np.where(u <= x_last, body, tail)

    def f2(u):
        u = np.asarray(u, dtype=float)
        tail = -k * slope * np.exp(-k * np.maximum(u - x_last, 0.0))
        body = np.where(u <= x_first, 0.0, d2(inside(u)))
        return np.where(u <= x_last, body, tail)

    return YieldFn(f, f1, f2, support_threshold=x_first, name=name)


def check_assumption(yld: YieldFn, hi: float | None = None, n: int = 2001, tol: float = 1e-10) -> None:
    """Sampled check that eta is in [0, 1], increasing and concave on its support."""
    xs = yld.support_threshold
    if not xs > 0:
        raise AssumptionError("support threshold must be > 0")
    hi = hi if hi is not None else xs + 50.0
    grid = np.linspace(xs, hi, n)[1:]
    vals = yld.eval(grid)
    if np.any(vals < -tol) or np.any(vals > 1 + tol):
        raise AssumptionError(f"{yld.name}: eta leaves [0, 1] on its support")
    if np.any(np.diff(vals) < -tol):
        raise AssumptionError(f"{yld.name}: eta is not increasing on its support")
    if np.any(yld.deriv2(grid) > tol):
        raise AssumptionError(f"{yld.name}: eta is not concave on its support")


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

class ValueFunction(Protocol):
    """Anything that can report ``(v, v', v'')`` with an explicit side."""

    kinks: tuple[float, ...]

    def evaluate(self, x, side: Side | str = Side.RIGHT) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ...


def L_operator(v, v1, v2, params: ModelParams):
    """``-r v + mu v' + (sigma^2/2) v''`` from precomputed derivatives."""
    return -params.r * np.asarray(v) + params.mu * np.asarray(v1) + 0.5 * params.sigma**2 * np.asarray(v2)


def apply_L(v: ValueFunction, x, params: ModelParams, side: Side | str = Side.RIGHT):
    val, d1, d2 = v.evaluate(x, side)
    return L_operator(val, d1, d2, params)


def apply_M(v: ValueFunction, x, yld: YieldFn, side: Side | str = Side.RIGHT):
    _, d1, _ = v.evaluate(x, side)
    return yld.eval(x) - d1


def structural_expression(yld: YieldFn, params: ModelParams, x):
    """``-r eta + mu eta' + (sigma^2/2) eta''``, the single-crossing test quantity."""
    return L_operator(yld.eval(x), yld.deriv1(x), yld.deriv2(x), params)


def count_sign_changes(values, zero_tol: float = 1e-12) -> int:
    vals = np.asarray(values, dtype=float)
    signs = np.sign(vals[np.abs(vals) >= zero_tol])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def structural_sign_changes(yld: YieldFn, params: ModelParams, grid) -> int:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    return count_sign_changes(structural_expression(yld, params, grid))


def liu_uniqueness_bound(params: ModelParams) -> bool:
    """Sufficient condition for at most one smooth-fit root (canonical eta)."""
    gp, gm = params.gammas
    return math.exp(gm - gp) < -gp / gm
