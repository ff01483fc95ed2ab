"""
Run configuration: one TOML file fully determines an analysis.

Example::

    [system]
    f = { expr = "2*x[1]", order = 1 }
    f_tilde = { expr = "0.05*x[1]^2", order = 1 }

    [region]
    radius = 0.5
    samples = 10000
    seed = 7

    [solver]
    interval = [-1.0, 1.0]

    [control]
    mode = "combined"
    gamma = 0.75

    [run]
    histories = [[0.4], [-0.3]]
    steps = 200

Every section except ``system`` is optional.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import COMBINED, NOMINAL_ONLY
from .equilibria import ESTIMATE_CASES, OrderHypothesisError, check_case_hypothesis
from .expr import ExprError
from .system import LABELS, ComponentMap, SystemBundle

SECTIONS = ("system", "region", "solver", "control", "run", "output")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RegionConfig:
    shape: str = "ball"
    center: tuple[float, ...] | None = None
    radius: float | None = None
    lo: tuple[float, ...] | None = None
    hi: tuple[float, ...] | None = None
    samples: int = 10000
    seed: int = 0
    r_excl: float | None = None


@dataclass(frozen=True)
class SolverConfig:
    interval: tuple[float, float] = (-1.0, 1.0)
    grid: int = 2001
    tol: float = 1e-12
    rank_tol: float | None = None
    cases: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ControlConfig:
    mode: str = COMBINED
    sigma: int = 0
    sigma_tilde: int = 0
    gamma: float = 0.75
    a: float | None = None  # None selects the default rule
    b: float | None = None
    denom_tol: float = 1e-100
    max_rounds: int = 20


@dataclass(frozen=True)
class RunConfig:
    histories: tuple[tuple[float, ...], ...] = ()
    steps: int = 200
    max_period: int = 8
    window: int = 32
    osc_tol: float = 1e-9


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "stabkit-out"
    formats: tuple[str, ...] = ("json", "csv", "text")


@dataclass(frozen=True)
class AnalysisConfig:
    bundle: SystemBundle
    raw: dict = field(repr=False)
    region: RegionConfig = RegionConfig()
    solver: SolverConfig = SolverConfig()
    control: ControlConfig | None = None
    run: RunConfig = RunConfig()
    output: OutputConfig = OutputConfig()

    def _applicable(self) -> tuple[str, ...]:
        present = {lab for lab in LABELS if self.bundle.component(lab) is not None}
        return tuple(
            name for name, case in ESTIMATE_CASES.items() if set(case.base + case.perturbing) <= present
        )

    def estimate_cases(self) -> tuple[str, ...]:
        """Cases to run: the configured list, else every applicable case whose order hypothesis holds."""
        if self.solver.cases is not None:
            return self.solver.cases
        return tuple(name for name in self._applicable() if ESTIMATE_CASES[name].hypothesis(self.bundle))

    def skipped_cases(self) -> dict[str, str]:
        """Applicable cases left out by default because their order hypothesis fails."""
        if self.solver.cases is not None:
            return {}
        return {
            name: ESTIMATE_CASES[name].requirement
            for name in self._applicable()
            if not ESTIMATE_CASES[name].hypothesis(self.bundle)
        }


# -- field readers -----------------------------------------------------------


def _get(section: dict, key: str, kind, where: str, default=None):
    if key not in section:
        return default
    v = section[key]
    name = f"{where}.{key}"
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(name, f"expected a number, got {v!r}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(name, f"expected an integer, got {v!r}")
        return v
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError(name, f"expected a string, got {v!r}")
        return v
    if kind == "vector":
        if not isinstance(v, list) or not v or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
        ):
            raise ConfigError(name, f"expected a nonempty list of numbers, got {v!r}")
        return tuple(float(x) for x in v)
    raise TypeError(kind)


def _check_keys(section: dict, allowed: tuple[str, ...], where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}", f"unknown key (allowed: {', '.join(allowed)})")


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected a table")
    return sec


def _bundle(sec: dict) -> SystemBundle:
    _check_keys(sec, LABELS, "system")
    if "f" not in sec:
        raise ConfigError("system.f", "component f is required")
    parts = {}
    for lab in LABELS:
        if lab not in sec:
            continue
        entry = sec[lab]
        where = f"system.{lab}"
        if not isinstance(entry, dict):
            raise ConfigError(where, "expected a table with keys expr and order")
        _check_keys(entry, ("expr", "order"), where)
        text = _get(entry, "expr", str, where)
        order = _get(entry, "order", int, where)
        if text is None or order is None:
            raise ConfigError(where, "both expr and order are required")
        if order < 1:
            raise ConfigError(f"{where}.order", "order must be a positive integer")
        try:
            parts[lab] = ComponentMap.from_text(lab, text, order)
        except ExprError as exc:
            raise ConfigError(f"{where}.expr", str(exc)) from None
    return SystemBundle(**parts)


def parse_config(raw: dict, seed_override: int | None = None) -> AnalysisConfig:
    """Validate a decoded TOML document; all checks run before any numerics."""
    _check_keys(raw, SECTIONS + ("schema",), "config")
    bundle = _bundle(_section(raw, "system"))

    sec = _section(raw, "region")
    _check_keys(sec, ("shape", "center", "radius", "lo", "hi", "samples", "seed", "r_excl"), "region")
    shape = _get(sec, "shape", str, "region", "ball")
    if shape not in ("ball", "box"):
        raise ConfigError("region.shape", "must be 'ball' or 'box'")
    region = RegionConfig(
        shape=shape,
        center=_get(sec, "center", "vector", "region"),
        radius=_get(sec, "radius", float, "region", 1.0 if shape == "ball" else None),
        lo=_get(sec, "lo", "vector", "region"),
        hi=_get(sec, "hi", "vector", "region"),
        samples=_get(sec, "samples", int, "region", 10000),
        seed=_get(sec, "seed", int, "region", 0) if seed_override is None else int(seed_override),
        r_excl=_get(sec, "r_excl", float, "region"),
    )
    if shape == "ball" and not region.radius > 0:
        raise ConfigError("region.radius", "must be positive")
    if shape == "box":
        if region.lo is None or region.hi is None:
            raise ConfigError("region.lo", "a box region needs lo and hi")
        if len(region.lo) != len(region.hi) or any(a >= b for a, b in zip(region.lo, region.hi)):
            raise ConfigError("region.hi", "must exceed lo componentwise")
        region = RegionConfig(shape, region.center, None, region.lo, region.hi, region.samples, region.seed,
                              region.r_excl)
    if region.samples < 1:
        raise ConfigError("region.samples", "must be at least 1")
    if region.seed < 0 or region.seed >= 2**64:
        raise ConfigError("region.seed", "must be an unsigned 64-bit integer")

    sec = _section(raw, "solver")
    _check_keys(sec, ("interval", "grid", "tol", "rank_tol", "cases"), "solver")
    interval = _get(sec, "interval", "vector", "solver", (-1.0, 1.0))
    if len(interval) != 2 or not interval[0] < interval[1]:
        raise ConfigError("solver.interval", "expected [a, b] with a < b")
    cases = sec.get("cases")
    if cases is not None:
        if not isinstance(cases, list) or not all(isinstance(c, str) for c in cases):
            raise ConfigError("solver.cases", "expected a list of case names")
        for c in cases:
            if c not in ESTIMATE_CASES:
                raise ConfigError("solver.cases", f"unknown case {c!r}; choose from {sorted(ESTIMATE_CASES)}")
        cases = tuple(cases)
    solver = SolverConfig(
        interval=interval,
        grid=_get(sec, "grid", int, "solver", 2001),
        tol=_get(sec, "tol", float, "solver", 1e-12),
        rank_tol=_get(sec, "rank_tol", float, "solver"),
        cases=cases,
    )
    if solver.grid < 2:
        raise ConfigError("solver.grid", "must be at least 2")

    control = None
    if "control" in raw:
        sec = _section(raw, "control")
        _check_keys(sec, ("mode", "sigma", "sigma_tilde", "gamma", "a", "b", "denom_tol", "max_rounds"), "control")
        ab = {}
        for key in ("a", "b"):
            v = sec.get(key, "default")
            if v == "default":
                ab[key] = None
            else:
                ab[key] = _get(sec, key, float, "control")
        control = ControlConfig(
            mode=_get(sec, "mode", str, "control", COMBINED),
            sigma=_get(sec, "sigma", int, "control", 0),
            sigma_tilde=_get(sec, "sigma_tilde", int, "control", 0),
            gamma=_get(sec, "gamma", float, "control", 0.75),
            a=ab["a"],
            b=ab["b"],
            denom_tol=_get(sec, "denom_tol", float, "control", 1e-100),
            max_rounds=_get(sec, "max_rounds", int, "control", 20),
        )
        if control.mode not in (COMBINED, NOMINAL_ONLY):
            raise ConfigError("control.mode", f"must be {COMBINED!r} or {NOMINAL_ONLY!r}")
        if not 0.0 <= control.gamma <= 1.0:
            raise ConfigError("control.gamma", "must lie in [0, 1]")
        if control.sigma < 0 or control.sigma_tilde < 0:
            raise ConfigError("control.sigma", "delays must be nonnegative")
        if control.mode == NOMINAL_ONLY and control.sigma_tilde:
            raise ConfigError("control.sigma_tilde", "unused in nominal_only mode")
        if bundle.g is not None or bundle.g_tilde is not None:
            raise ConfigError("system.g", "g and g_tilde are synthesized when a [control] section is present")
        if control.mode == NOMINAL_ONLY and bundle.order_of("f_tilde") > bundle.order_of("f"):
            raise ConfigError("system.f_tilde.order", "nominal_only feedback needs order(f_tilde) <= order(f)")

    sec = _section(raw, "run")
    _check_keys(sec, ("histories", "steps", "max_period", "window", "osc_tol"), "run")
    hist = sec.get("histories", [])
    if not isinstance(hist, list):
        raise ConfigError("run.histories", "expected a list of histories")
    histories = tuple(_get({"h": h}, "h", "vector", "run.histories") for h in hist)
    run = RunConfig(
        histories=histories,
        steps=_get(sec, "steps", int, "run", 200),
        max_period=_get(sec, "max_period", int, "run", 8),
        window=_get(sec, "window", int, "run", 32),
        osc_tol=_get(sec, "osc_tol", float, "run", 1e-9),
    )
    if run.steps < 0:
        raise ConfigError("run.steps", "must be nonnegative")
    if run.max_period < 1 or run.window < 2 * run.max_period:
        raise ConfigError("run.window", "need max_period >= 1 and window >= 2 * max_period")

    sec = _section(raw, "output")
    _check_keys(sec, ("dir", "formats"), "output")
    formats = sec.get("formats", ["json", "csv", "text"])
    if not isinstance(formats, list) or not set(formats) <= {"json", "csv", "text"}:
        raise ConfigError("output.formats", "expected a subset of ['json', 'csv', 'text']")
    output = OutputConfig(dir=_get(sec, "dir", str, "output", "stabkit-out"), formats=tuple(formats))

    cfg = AnalysisConfig(bundle, raw, region, solver, control, run, output)
    for name in cfg.estimate_cases():
        try:
            check_case_hypothesis(bundle, ESTIMATE_CASES[name])
        except OrderHypothesisError as exc:
            raise ConfigError("solver.cases", str(exc)) from None
    _check_dimensions(cfg)
    return cfg


def state_dim(cfg: AnalysisConfig) -> int:
    """Dimension of the states the region lives in."""
    if cfg.control is not None:
        return cfg.bundle.order(("f", "f_tilde")) + max(cfg.control.sigma, cfg.control.sigma_tilde)
    return cfg.bundle.m


def _check_dimensions(cfg: AnalysisConfig) -> None:
    dim = state_dim(cfg)
    r = cfg.region
    for key in ("center", "lo", "hi"):
        v = getattr(r, key)
        if v is not None and len(v) != dim:
            raise ConfigError(f"region.{key}", f"expected {dim} entries, got {len(v)}")
    for i, h in enumerate(cfg.run.histories):
        if len(h) != dim:
            raise ConfigError(f"run.histories[{i}]", f"expected {dim} values (newest first), got {len(h)}")


def load_config(path: str | Path, seed_override: int | None = None) -> AnalysisConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from None
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    return parse_config(raw, seed_override)


def echo(cfg: AnalysisConfig) -> dict[str, Any]:
    """Config as it was applied (seed override included), for the report."""
    raw = {k: v for k, v in cfg.raw.items()}
    region = dict(raw.get("region", {}))
    region["seed"] = cfg.region.seed
    raw["region"] = region
    return raw
