"""Monte Carlo for the controlled, reflected diffusion.

Each Euler step does, in order: diffuse, reflect at 0, enforce the policy.
Control lumps earn the exact integral of ``eta`` over the traversed interval.
Paths draw from their own generator keyed by ``(seed, path_index)``, so
results do not depend on how paths are split across workers.

Several "lanes" (a policy plus a start point) can share the same noise; this
is how start points and policies are compared on common random numbers.
"""
from __future__ import annotations

import math
import os
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np

from .barrier import barrier_value
from .model import CanonicalYield, ModelParams, YieldFn

WORKERS_ENV = "BANDPOLICY_WORKERS"
REFLECTIONS = ("symmetric", "projection")


class HorizonTooShortError(ValueError):
    """The discounted tail beyond the horizon is too large to ignore."""


# ---------------------------------------------------------------------------
# policies and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Policy:
    """Singular policy: ``barrier``, ``band`` or a general action ``region``.

    A region is a union of closed intervals ``[a, c]`` (``c`` may be ``inf``);
    inside one, the state is pushed down to ``a``.  A band reflects at
    ``lam`` until the state first falls to ``theta``, then reflects at ``b``.
    """

    kind: str
    b: float | None = None
    theta: float | None = None
    lam: float | None = None
    intervals: tuple[tuple[float, float], ...] = ()

    @classmethod
    def barrier(cls, b: float) -> "Policy":
        return cls("barrier", b=float(b), intervals=((float(b), math.inf),))

    @classmethod
    def band(cls, b: float, theta: float, lam: float) -> "Policy":
        if not b < theta < lam:
            raise ValueError("band policy needs b < theta < lambda")
        return cls("band", b=float(b), theta=float(theta), lam=float(lam))

    @classmethod
    def from_band_solution(cls, sol) -> "Policy":
        return cls.band(sol.b, sol.theta, sol.lam)

    @classmethod
    def region(cls, intervals) -> "Policy":
        ivs = tuple(sorted((float(a), float(c)) for a, c in intervals))
        if not ivs:
            raise ValueError("empty action region")
        for (a, c), (a2, _) in zip(ivs, ivs[1:]):
            if not c < a2:
                raise ValueError("action intervals must be disjoint")
        if any(a <= 0 or c < a for a, c in ivs):
            raise ValueError("action intervals must lie in (0, inf) with a <= c")
        return cls("region", intervals=ivs)

    @property
    def thresholds(self) -> tuple[float, ...]:
        if self.kind == "band":
            return (self.b, self.theta, self.lam)
        return tuple(a for a, _ in self.intervals)

    @property
    def upper_threshold(self) -> float:
        """Largest level the controlled state can occupy after the first step."""
        if self.kind == "band":
            return self.lam
        return max(a for a, _ in self.intervals)

    def _encode(self):
        """(high-mode intervals, low-mode intervals, switch level)."""
        if self.kind == "band":
            return ((self.lam, math.inf),), ((self.b, self.theta), (self.lam, math.inf)), self.theta
        return self.intervals, self.intervals, -math.inf


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon_T: float | None = None
    n_paths: int = 10_000
    seed: int = 20240101
    x0: float = 5.0
    reflection: str = "symmetric"
    tail_fraction: float = 0.1
    target_std_error: float = 0.1
    allow_short_horizon: bool = False
    value_bound: float | None = None
    antithetic: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.horizon_T is not None and not self.horizon_T > 0:
            raise ValueError("horizon_T must be > 0")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.x0 >= 0:
            raise ValueError("x0 must be >= 0")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        if self.reflection not in REFLECTIONS:
            raise ValueError(f"reflection must be one of {REFLECTIONS}")

    def horizon(self, params: ModelParams) -> float:
        return self.horizon_T if self.horizon_T is not None else 12.0 / params.r


@dataclass
class SimEstimate:
    mean: float
    std_error: float
    n_paths: int
    tail_bound: float
    diagnostics: dict = field(default_factory=dict)
    policy: Policy | None = None
    x0: float | None = None
    config: dict = field(default_factory=dict)

    def ci(self, k: float = 3.0) -> tuple[float, float]:
        return self.mean - k * self.std_error, self.mean + k * self.std_error

    def covers(self, value: float, k: float = 3.0) -> bool:
        lo, hi = self.ci(k)
        return lo <= value <= hi


MartingalePoint = namedtuple("MartingalePoint", "t mean std_error")


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _table_lump(lo, hi, tab_x0, tab_h, tab_H):
    """``int_lo^hi eta`` by linear interpolation of a tabulated antiderivative."""
    out = 0.0
    for x, sgn in ((hi, 1.0), (lo, -1.0)):
        u = (x - tab_x0) / tab_h
        if u > 0.0:
            i = min(int(u), tab_H.shape[0] - 2)
            w = u - i
            out += sgn * (tab_H[i] * (1.0 - w) + tab_H[i + 1] * w)
    return out


@nb.njit(cache=True, nogil=True)
def _canonical_lump(lo, hi):
    """``int_lo^hi (1 - 1/s)^+ ds`` for ``lo <= hi``."""
    lo = max(lo, 1.0)
    if hi <= lo:
        return 0.0
    # log1p keeps small overshoots accurate
    return (hi - lo) - math.log1p((hi - lo) / lo)


BLOCK = 4096


@nb.njit(cache=True, nogil=True)
def _same_future(k, k2, X, mode, lo, up, nint, switch):
    """Lanes at the same state, in the same mode and facing the same remaining policy."""
    if X[k] != X[k2] or mode[k] != mode[k2]:
        return False
    for md in range(mode[k] + 1):
        if nint[md, k] != nint[md, k2]:
            return False
        for q in range(nint[md, k]):
            if lo[md, k, q] != lo[md, k2, q] or up[md, k, q] != up[md, k2, q]:
                return False
    return mode[k] == 0 or switch[k] == switch[k2]


@nb.njit(cache=True, nogil=True)
def _run_path(gen, sign, dt, nsteps, mu, sigma, r, symmetric, x0s, lo, up, nint, switch,
              canonical, tab_x0, tab_h, tab_H, ck_steps, stride,
              out_total, out_L, out_xi, out_sw, ck_X, ck_acc, rec):
    """One path for every lane.

    ``lo[m, k, :nint[m, k]]`` and ``up`` hold the action intervals of lane
    ``k`` in mode ``m`` (1 = before the switch, 0 = after).  The policy logic
    is written inline; helper calls taking arrays are slow in the step loop.

    Lanes see the same noise, so two lanes that reach the same state with the
    same remaining policy stay together.  Such a lane then follows its leader
    with fixed offsets in the accumulated quantities and is no longer stepped.
    """
    nl = x0s.shape[0]
    nck = ck_steps.shape[0]
    nrec = rec.shape[0]
    sq = sign * sigma * math.sqrt(dt)
    drift = mu * dt
    dw = np.empty(BLOCK)
    disc = np.empty(BLOCK)  # discount relative to the block start
    for j in range(BLOCK):
        disc[j] = math.exp(-r * dt * j)
    X = x0s.copy()
    mode = np.ones(nl, dtype=np.int64)
    amin = np.empty(nl)
    tot = np.zeros(nl)
    loc = np.zeros(nl)
    xis = np.zeros(nl)
    leader = np.arange(nl)
    offset = np.zeros((nl, 3))
    act = np.arange(nl)
    na = nl
    for k in range(nl):
        amin[k] = lo[1, k, 0]  # intervals are sorted, so nothing acts below this

    # blocks end at checkpoints and recorded steps so the step loop has no bookkeeping
    start = 0  # step 0 is the enforcement at the initial state
    c = 0
    while start <= nsteps:
        d0 = math.exp(-r * dt * start)
        if start == 0:
            m = 1
            dw[0] = 0.0
        else:
            end = min(start + BLOCK - 1, nsteps)
            if c < nck and ck_steps[c] < end:
                end = ck_steps[c]
            if nrec > 0:
                end = min(end, ((start + stride - 1) // stride) * stride)
            m = end - start + 1
            for j in range(m):
                dw[j] = drift + sq * gen.standard_normal()
        # lanes do not interact inside a block, so run each one through it with local state
        for ii in range(na):
            k = act[ii]
            x = X[k]
            md = mode[k]
            am = amin[k]
            sw = switch[k]
            tk = tot[k]
            lk = loc[k]
            xk = xis[k]
            for j in range(m):
                xp = x
                x = xp + dw[j]
                if x < 0.0:
                    if symmetric:
                        lk -= 2.0 * x
                        x = -x
                    else:
                        lk -= x
                        x = 0.0
                if x > am:
                    tgt = math.inf
                    for q in range(nint[md, k]):
                        a = lo[md, k, q]
                        if x > a and xp <= up[md, k, q] and a < tgt:
                            tgt = a
                    if tgt < x:
                        lump = _canonical_lump(tgt, x) if canonical else _table_lump(tgt, x, tab_x0, tab_h, tab_H)
                        tk += d0 * disc[j] * lump
                        xk += x - tgt
                        x = tgt
                if x <= sw and md == 1:
                    md = 0
                    am = lo[0, k, 0]
                    tgt = math.inf
                    for q in range(nint[0, k]):
                        a = lo[0, k, q]
                        if x > a and x <= up[0, k, q] and a < tgt:
                            tgt = a
                    if tgt < x:
                        lump = _canonical_lump(tgt, x) if canonical else _table_lump(tgt, x, tab_x0, tab_h, tab_H)
                        tk += d0 * disc[j] * lump
                        xk += x - tgt
                        x = tgt
            X[k] = x
            mode[k] = md
            amin[k] = am
            tot[k] = tk
            loc[k] = lk
            xis[k] = xk
        i = start + m - 1
        for k in range(nl):
            if leader[k] != k:
                ld = leader[k]
                X[k] = X[ld]
                mode[k] = mode[ld]
                tot[k] = tot[ld] + offset[k, 0]
                loc[k] = loc[ld] + offset[k, 1]
                xis[k] = xis[ld] + offset[k, 2]
        merged = False
        for ii in range(na):
            k2 = act[ii]
            for jj in range(ii):
                k = act[jj]
                if leader[k] == k and _same_future(k, k2, X, mode, lo, up, nint, switch):
                    leader[k2] = k
                    offset[k2, 0] = tot[k2] - tot[k]
                    offset[k2, 1] = loc[k2] - loc[k]
                    offset[k2, 2] = xis[k2] - xis[k]
                    merged = True
                    break
        if merged:
            na = 0
            for k in range(nl):
                if leader[k] == k:
                    act[na] = k
                    na += 1
        while c < nck and ck_steps[c] == i:
            for k in range(nl):
                ck_X[k, c] = X[k]
                ck_acc[k, c] = tot[k]
            c += 1
        if nrec > 0 and i % stride == 0 and i // stride < nrec:
            q = i // stride
            rec[q, 0] = i * dt
            rec[q, 1] = X[0]
            rec[q, 2] = xis[0]
            rec[q, 3] = loc[0]
            rec[q, 4] = float(mode[0])
        start += m
    for k in range(nl):
        out_total[k] = tot[k]
        out_L[k] = loc[k]
        out_xi[k] = xis[k]
        out_sw[k] = 1.0 - mode[k]
    return 0


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), int(path_index)))))


def _yield_table(yld: YieldFn, hi: float, h: float = 1e-4):
    if isinstance(yld, CanonicalYield):
        return True, 0.0, 1.0, np.zeros(2)
    x0 = yld.support_threshold
    grid = x0 + h * np.arange(int(math.ceil((hi - x0) / h)) + 2)
    eta = yld.eval(grid)
    H = np.concatenate(([0.0], np.cumsum(0.5 * (eta[1:] + eta[:-1]) * h)))
    return False, x0, h, H


def _pack(encoded):
    """Interval arrays indexed by (mode, lane, interval); mode 1 is pre-switch."""
    K = max(len(e[m]) for e in encoded for m in (0, 1))
    lo = np.full((2, len(encoded), K), math.inf)
    up = np.full((2, len(encoded), K), math.inf)
    n = np.zeros((2, len(encoded)), dtype=np.int64)
    for k, (high, low, _) in enumerate(encoded):
        for md, ivs in ((1, high), (0, low)):
            n[md, k] = len(ivs)
            for j, (a, c) in enumerate(ivs):
                lo[md, k, j], up[md, k, j] = a, c
    return lo, up, n


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _simulate_lanes(lanes, config: SimConfig, params: ModelParams, yld: YieldFn, horizon: float,
                    checkpoints=(), record_stride: int = 0):
    """Run ``n_paths`` paths for every ``(policy, x0)`` lane on common noise."""
    nsteps = int(round(horizon / config.dt))
    enc = [p._encode() for p, _ in lanes]
    lo, up, nint = _pack(enc)
    switch = np.array([e[2] for e in enc], dtype=float)
    x0s = np.array([x for _, x in lanes], dtype=float)
    top = max(max(x0s), max(max(p.thresholds) for p, _ in lanes)) + 50.0
    canonical, tx0, th, tH = _yield_table(yld, top)
    ck_steps = np.array(sorted(int(round(t / config.dt)) for t in checkpoints), dtype=np.int64)

    n, nl, nc = config.n_paths, len(lanes), len(ck_steps)
    total = np.zeros((n, nl))
    L = np.zeros((n, nl))
    xi = np.zeros((n, nl))
    sw = np.zeros((n, nl))
    ckX = np.zeros((n, nl, nc))
    ckA = np.zeros((n, nl, nc))
    nrec = nsteps // record_stride + 1 if record_stride else 0
    rec = np.zeros((nrec, 5))
    stride = max(record_stride, 1)
    symmetric = config.reflection == "symmetric"

    def work(idx):
        for p in idx:
            if config.antithetic:
                gen, sign = path_generator(config.seed, p // 2), (-1.0 if p % 2 else 1.0)
            else:
                gen, sign = path_generator(config.seed, p), 1.0
            _run_path(gen, sign, config.dt, nsteps, params.mu, params.sigma, params.r,
                      symmetric, x0s, lo, up, nint, switch, canonical, tx0, th, tH,
                      ck_steps, stride, total[p], L[p], xi[p], sw[p], ckX[p], ckA[p],
                      rec if p == 0 else rec[:0])

    workers = min(_workers(), n)
    if workers == 1:
        work(range(n))
    else:
        chunks = np.array_split(np.arange(n), workers)
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(work, chunks))
    return {"total": total, "L": L, "xi": xi, "switched": sw, "ck_steps": ck_steps,
            "ck_X": ckX, "ck_acc": ckA, "record": rec}


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def policy_value_bound(policy: Policy, params: ModelParams, yld: YieldFn) -> float:
    """Rough size of the value once the state sits at the policy's upper threshold.

    Taken as the largest barrier value, over the policy's thresholds, evaluated
    at the upper threshold.  A heuristic scale, not a certified bound.
    """
    u = policy.upper_threshold
    return max(float(barrier_value(c, u, params, yld)) for c in policy.thresholds)


def _std_error(sample, antithetic: bool = False) -> float:
    """Sample std / sqrt(n); with antithetic pairs, computed over pair means."""
    sample = np.asarray(sample, dtype=float)
    if antithetic:
        sample = 0.5 * (sample[0::2] + sample[1::2])
    n = len(sample)
    return float(np.std(sample, ddof=1) / math.sqrt(n)) if n > 1 else math.nan


def _echo(config: SimConfig, horizon: float) -> dict:
    d = asdict(config)
    d["horizon_T"] = horizon
    return d


def simulate_many(lanes, config: SimConfig, params: ModelParams, yld: YieldFn) -> list[SimEstimate]:
    """Estimates for several ``(policy, x0)`` pairs on common random numbers."""
    lanes = [(p, float(x)) for p, x in lanes]
    horizon = config.horizon(params)
    bounds = []
    for p, _ in lanes:
        vb = config.value_bound if config.value_bound is not None else policy_value_bound(p, params, yld)
        bound = math.exp(-params.r * horizon) * vb
        if bound > config.tail_fraction * config.target_std_error and not config.allow_short_horizon:
            raise HorizonTooShortError(
                f"discounted tail bound {bound:.3g} exceeds {config.tail_fraction} x target std error "
                f"{config.target_std_error}; lengthen the horizon or set allow_short_horizon")
        bounds.append(bound)
    out = _simulate_lanes(lanes, config, params, yld, horizon)
    estimates = []
    for k, (p, x0) in enumerate(lanes):
        tot = out["total"][:, k]
        diag = {"mean_local_time_at_0": float(out["L"][:, k].mean()),
                "mean_total_control": float(out["xi"][:, k].mean())}
        if p.kind == "band":
            diag["switch_fraction"] = float(out["switched"][:, k].mean())
        estimates.append(SimEstimate(float(tot.mean()), _std_error(tot, config.antithetic), config.n_paths, bounds[k], diag,
                                     policy=p, x0=x0, config=_echo(config, horizon)))
    return estimates


def simulate_policy(policy: Policy, config: SimConfig, params: ModelParams, yld: YieldFn) -> SimEstimate:
    return simulate_many([(policy, config.x0)], config, params, yld)[0]


def martingale_diagnostic(policy: Policy, v, config: SimConfig, params: ModelParams, yld: YieldFn,
                          checkpoints, control=None) -> list[MartingalePoint]:
    """Estimate ``E[Y_t]`` with ``Y_t = v(X_t) e^{-rt} + yield accrued by t``.

    ``control`` is an optional value function known to make ``Y`` a martingale
    under ``policy`` (its own value); the estimator then uses
    ``Y^v - Y^control + control(x0)``, in which the accrued yield cancels.
    """
    checkpoints = sorted(float(t) for t in checkpoints)
    horizon = max(checkpoints[-1], config.dt)
    out = _simulate_lanes([(policy, config.x0)], config, params, yld, horizon, checkpoints)

    def vals(fn, x):
        return np.asarray(fn.evaluate(x)[0] if hasattr(fn, "evaluate") else fn(x), dtype=float)

    v0 = float(vals(v, np.array([config.x0]))[0])
    c0 = float(vals(control, np.array([config.x0]))[0]) if control is not None else 0.0
    points = []
    for j, step in enumerate(out["ck_steps"]):
        t = float(step * config.dt)
        if step == 0:
            points.append(MartingalePoint(0.0, v0, 0.0))
            continue
        X = out["ck_X"][:, 0, j]
        disc = math.exp(-params.r * t)
        if control is None:
            Y = vals(v, X) * disc + out["ck_acc"][:, 0, j]
        else:
            Y = (vals(v, X) - vals(control, X)) * disc + c0
        points.append(MartingalePoint(t, float(Y.mean()), _std_error(Y, config.antithetic)))
    return points


def sample_path(policy: Policy, config: SimConfig, params: ModelParams, yld: YieldFn,
                horizon: float | None = None, stride: int = 100) -> np.ndarray:
    """One trajectory, columns ``t, X, xi, L, mode`` (mode 1 = high), every ``stride`` steps.

    Uses the noise of path 0 for ``config.seed``.
    """
    horizon = horizon if horizon is not None else config.horizon(params)
    one = SimConfig(**{**asdict(config), "n_paths": 1, "antithetic": False})
    out = _simulate_lanes([(policy, config.x0)], one, params, yld, horizon, record_stride=max(int(stride), 1))
    return out["record"]
