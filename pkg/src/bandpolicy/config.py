"""Run configuration: one YAML file, nested or with dotted keys.

Every key has a default, so an empty file (or none) is a valid configuration.
Unknown keys are rejected and all values are re-validated on load.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .band import DEFAULT_GUESS, MAX_ITER, TOL
from .barrier import DEFAULT_SCAN
from .model import CANONICAL, ModelParams, ParameterError, YieldFn, table_yield
from .sim import REFLECTIONS, SimConfig
from .verify import DEFAULT_TOL


class ConfigError(ValueError):
    """Malformed or invalid configuration (exit status 2)."""


def _float(v):
    if isinstance(v, bool):
        raise ValueError("expected a number")
    return float(v)


def _sigma(v):
    if isinstance(v, str) and v.strip().lower() == "sqrt2":
        return math.sqrt(2.0)
    return _float(v)


def _opt_float(v):
    return None if v is None else _float(v)


def _int(v):
    x = _float(v)
    if not x.is_integer():
        raise ValueError("expected an integer")
    return int(x)


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _floats(n=None):
    def conv(v):
        if not isinstance(v, (list, tuple)):
            raise ValueError("expected a list of numbers")
        out = tuple(_float(t) for t in v)
        if n is not None and len(out) != n:
            raise ValueError(f"expected {n} numbers, got {len(out)}")
        return out
    return conv


def _opt_floats(v):
    return None if v is None else _floats()(v)


def _choice(*options):
    def conv(v):
        if v not in options:
            raise ValueError(f"expected one of {options}")
        return v
    return conv


def _opt_str(v):
    return None if v is None else str(v)


SCHEMA = {
    "model.mu": (_float, 0.508378),
    "model.sigma": (_sigma, "sqrt2"),
    "model.r": (_float, 0.00520074),
    "yield.kind": (_choice("canonical", "table"), "canonical"),
    "yield.x": (_opt_floats, None),
    "yield.y": (_opt_floats, None),
    "scan.lo": (_float, DEFAULT_SCAN[0]),
    "scan.hi": (_float, DEFAULT_SCAN[1]),
    "scan.step": (_float, DEFAULT_SCAN[2]),
    "curve.x_eval": (_float, 5.0),
    "curve.lo": (_float, 1.5),
    "curve.hi": (_float, 10.0),
    "curve.step": (_float, 0.01),
    "band.initial_guess": (_floats(5), DEFAULT_GUESS),
    "band.tol": (_float, TOL),
    "band.max_iter": (_int, MAX_ITER),
    "band.multistart": (_bool, False),
    "verify.lo": (_float, 0.0),
    "verify.hi": (_float, 20.0),
    "verify.step": (_float, 1e-3),
    "verify.tol": (_float, DEFAULT_TOL),
    "verify.refine_step": (_float, 1e-6),
    "verify.refine_width": (_float, 0.01),
    "verify.candidate": (_choice("auto", "band", "barrier"), "auto"),
    "verify.barrier": (_opt_float, None),
    "sim.policy": (_choice("barrier", "band"), "band"),
    "sim.barrier": (_opt_float, None),
    "sim.dt": (_float, 1e-3),
    "sim.horizon": (_opt_float, None),
    "sim.paths": (_int, 10_000),
    "sim.seed": (_int, 20240101),
    "sim.x0": (_float, 5.0),
    "sim.reflection": (_choice(*REFLECTIONS), "symmetric"),
    "sim.antithetic": (_bool, False),
    "sim.tail_fraction": (_float, 0.1),
    "sim.target_std_error": (_float, 0.1),
    "sim.allow_short_horizon": (_bool, False),
    "sim.value_bound": (_opt_float, None),
    "sim.sample_path": (_bool, False),
    "sim.stride": (_int, 1000),
    "sweep.axis": (_choice("mu", "sigma", "r"), "mu"),
    "sweep.lo": (_float, 0.498378),
    "sweep.hi": (_float, 0.518378),
    "sweep.n": (_int, 21),
    "output.dir": (_opt_str, None),
}


def flatten(tree, prefix: str = "") -> dict:
    """Nested mappings to dotted keys; already-dotted keys pass through."""
    flat = {}
    for key, val in tree.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            flat.update(flatten(val, name + "."))
        else:
            flat[name] = val
    return flat


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def params(self) -> ModelParams:
        return ModelParams(self["model.mu"], self["model.sigma"], self["model.r"])

    @property
    def yld(self) -> YieldFn:
        if self["yield.kind"] == "canonical":
            return CANONICAL
        return table_yield(np.array(self["yield.x"]), np.array(self["yield.y"]))

    @property
    def scan(self) -> tuple[float, float, float]:
        return self["scan.lo"], self["scan.hi"], self["scan.step"]

    def sim_config(self) -> SimConfig:
        return SimConfig(dt=self["sim.dt"], horizon_T=self["sim.horizon"], n_paths=self["sim.paths"],
                         seed=self["sim.seed"], x0=self["sim.x0"], reflection=self["sim.reflection"],
                         tail_fraction=self["sim.tail_fraction"], target_std_error=self["sim.target_std_error"],
                         allow_short_horizon=self["sim.allow_short_horizon"], value_bound=self["sim.value_bound"],
                         antithetic=self["sim.antithetic"])

    def with_overrides(self, **changes) -> "RunConfig":
        """Same configuration with some dotted keys replaced, re-validated."""
        return build_config({**self.values, **changes})

    def as_dict(self) -> dict:
        return dict(self.values)


def build_config(raw: dict | None) -> RunConfig:
    raw = flatten(raw or {})
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for key, (conv, default) in SCHEMA.items():
        val = raw.get(key, default)
        try:
            values[key] = conv(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc} (got {val!r})") from None
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg["yield.kind"] == "table" and (cfg["yield.x"] is None or cfg["yield.y"] is None):
        raise ConfigError("yield.kind = table needs yield.x and yield.y")
    try:
        cfg.params
        yld = cfg.yld
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"yield: {exc}") from None
    lo, hi, step = cfg.scan
    if not (lo > yld.support_threshold and hi > lo and step > 0):
        raise ConfigError(f"scan range must satisfy {yld.support_threshold} < lo < hi and step > 0")
    if not (cfg["curve.hi"] > cfg["curve.lo"] > 0 and cfg["curve.step"] > 0):
        raise ConfigError("curve range must satisfy 0 < lo < hi and step > 0")
    if not (cfg["band.tol"] > 0 and cfg["band.max_iter"] >= 1):
        raise ConfigError("band.tol must be > 0 and band.max_iter >= 1")
    if not (cfg["verify.hi"] > cfg["verify.lo"] and cfg["verify.step"] > 0 and cfg["verify.tol"] >= 0):
        raise ConfigError("verify grid must satisfy lo < hi, step > 0, tol >= 0")
    if not (cfg["verify.refine_step"] > 0 and cfg["verify.refine_width"] >= 0):
        raise ConfigError("verify refinement must satisfy refine_step > 0, refine_width >= 0")
    if cfg["sim.stride"] < 1:
        raise ConfigError("sim.stride must be >= 1")
    if not (cfg["sim.tail_fraction"] > 0 and cfg["sim.target_std_error"] > 0):
        raise ConfigError("sim.tail_fraction and sim.target_std_error must be > 0")
    try:
        cfg.sim_config()
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from None
    if cfg["sweep.n"] < 1 or cfg["sweep.hi"] < cfg["sweep.lo"]:
        raise ConfigError("empty sweep range")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return build_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return build_config(raw)
