"""
Stabilizing feedback built from delayed copies of the uncontrolled dynamics.

The controller is ``g = lam * f(X delayed by sigma)`` and, in combined mode,
``g_tilde = lam_tilde * f_tilde(X delayed by sigma_tilde)``.  Gains are chosen
per step from the current state: their signs oppose the deviation of the
uncontrolled step and their joint size is a fraction ``gamma`` of the
magnitude that would cancel the deviation from the target equilibrium
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .equilibria import OrderHypothesisError, scan_roots
from .expr import ExprDomainError
from .stability import RegionSpec, sample_region
from .system import SystemBundle, Trajectory, VectorMap

COMBINED = "combined"
NOMINAL_ONLY = "nominal_only"


class SynthesisError(RuntimeError):
    pass


def _sign(v: float) -> float:
    return 1.0 if v > 0.0 else (-1.0 if v < 0.0 else 0.0)


@dataclass(frozen=True)
class GainSchedule:
    """Rule producing (lam, lam_tilde) from the extended state.

    ``x_sign_ref`` is the uncontrolled perturbed equilibrium used in the sign
    rules; ``x_target`` is the closed-loop equilibrium used in the magnitude.
    """

    mode: str
    x_sign_ref: float
    x_target: float
    gamma: float = 0.75
    sigma: int = 0
    sigma_tilde: int = 0
    a: float = 0.0
    b: float = 0.0
    denom_tol: float = 1e-100
    rounds: int = 0
    a_rule: str = "given"
    b_rule: str = "given"

    def __post_init__(self):
        if self.mode not in (COMBINED, NOMINAL_ONLY):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.sigma < 0 or self.sigma_tilde < 0:
            raise ValueError("delays must be nonnegative")
        if self.mode == NOMINAL_ONLY and self.sigma_tilde:
            raise ValueError("sigma_tilde is unused in nominal_only mode")

    @property
    def max_delay(self) -> int:
        return max(self.sigma, self.sigma_tilde)


@dataclass(frozen=True)
class GainStep:
    x: float  # new sample
    lam: float
    lam_tilde: float
    bound: float  # gain-pair magnitude limit before scaling by gamma (nan when degenerate)
    f: float
    f_tilde: float
    f_delayed: float
    f_tilde_delayed: float


@dataclass(frozen=True)
class ClosedLoop:
    """Perturbed recursion with the synthesized feedback substituted.

    The state is the extended history ``(x_{n-1}, ..., x_{n-m-d})`` with
    ``d`` the largest delay.
    """

    bundle: SystemBundle
    schedule: GainSchedule

    def __post_init__(self):
        if self.bundle.g is not None or self.bundle.g_tilde is not None:
            raise OrderHypothesisError("controller parts are synthesized; the bundle must not define g or g_tilde")

    @property
    def m(self) -> int:
        return self.bundle.order(("f", "f_tilde"))

    @property
    def history_length(self) -> int:
        return self.m + self.schedule.max_delay

    def step(self, E: Sequence[float], include_perturbation: bool = True) -> GainStep:
        s = self.schedule
        f = self.bundle.f.body.evaluate_prefix
        ft = self.bundle.f_tilde.body.evaluate_prefix if self.bundle.f_tilde is not None else None
        F = f(E)
        Ft = ft(E) if ft is not None else 0.0
        Fd = f(E[s.sigma :])
        Ftd = ft(E[s.sigma_tilde :]) if ft is not None else 0.0

        lam = lam_t = 0.0
        if s.mode == COMBINED:
            denom = math.hypot(Fd, Ftd)
            if denom < s.denom_tol:
                bound = math.nan
            else:
                bound = abs(F + Ft - s.x_target) / denom
                sg = -_sign((F - s.x_sign_ref) * Fd)
                sg_t = -_sign((Ft - s.x_sign_ref) * Ftd)
                w, w_t = abs(Fd) if sg else 0.0, abs(Ftd) if sg_t else 0.0
                width = math.hypot(w, w_t)
                if width > 0.0:
                    R = s.gamma * bound
                    lam = sg * R * (w / width)
                    lam_t = sg_t * R * (w_t / width)
        else:
            if abs(Fd) < s.denom_tol:
                bound = math.nan
            else:
                bound = abs(F - s.x_target + s.a) / abs(Fd)
                lam = -_sign((F - s.x_sign_ref) * Fd) * s.gamma * bound

        x = F
        if include_perturbation and ft is not None:
            x = x + Ft
        if lam != 0.0:
            x = x + lam * Fd
        if lam_t != 0.0:
            x = x + lam_t * Ftd
        return GainStep(x, lam, lam_t, bound, F, Ft, Fd, Ftd)

    def head(self, E: Sequence[float]) -> float:
        return self.step(E).x

    def as_vector_map(self, dim: int | None = None) -> VectorMap:
        dim = self.history_length if dim is None else dim
        if dim < self.history_length:
            raise ValueError(f"closed loop needs dimension >= {self.history_length}")
        return VectorMap(dim, self.head, 1, f"closed_loop[{self.schedule.mode}]")

    def nominal_map(self, dim: int | None = None) -> VectorMap:
        """``f + g`` alone, i.e. the feedback acting on the unperturbed dynamics."""
        dim = self.history_length if dim is None else dim
        return VectorMap(dim, lambda E: self.step(E, include_perturbation=False).x, 1, "closed_loop_nominal")

    def simulate(self, history: Sequence[float], N: int) -> "ClosedLoopRun":
        """Run N steps from ``history = (x_0, x_{-1}, ...)`` recording every gain."""
        need = self.history_length
        if len(history) < need:
            raise ValueError(f"insufficient history for the delays: need {need} values, got {len(history)}")
        E = tuple(float(v) for v in history[:need])
        states = [E]
        rows = []
        status, message = "ok", ""
        for n in range(1, N + 1):
            try:
                st = self.step(E)
            except (ExprDomainError, OverflowError) as exc:
                status, message = "diverged-nonfinite", str(exc)
                break
            if not math.isfinite(st.x):
                status, message = "diverged-nonfinite", "non-finite state"
                break
            rows.append((n, st.lam, st.lam_tilde, st.bound))
            E = (st.x, *E[:-1])
            states.append(E)
        traj = Trajectory(np.array(states), status, message, self.as_vector_map(), "closed_loop")
        gains = np.array(rows, dtype=float).reshape(-1, 4)
        return ClosedLoopRun(traj, gains, self.schedule)


@dataclass
class ClosedLoopRun:
    trajectory: Trajectory
    gains: np.ndarray  # columns n, lam, lam_tilde, bound
    schedule: GainSchedule

    @property
    def values(self) -> np.ndarray:
        return self.trajectory.scalars[1:]


@dataclass(frozen=True)
class GainCheck:
    steps: int
    sign_violations: int
    magnitude_violations: int
    chain_violations: int
    chain_checked: int
    sign_ok: tuple[bool, ...] = ()

    @property
    def violations(self) -> int:
        return self.sign_violations + self.magnitude_violations


def verify_gain_trace(
    loop: ClosedLoop,
    run: ClosedLoopRun,
    region: RegionSpec | None = None,
    mag_tol: float = 1e-12,
    chain_tol: float = 1e-12,
) -> GainCheck:
    """Replay a run and check every recorded gain against the synthesis constraints.

    Signs must oppose the deviation of the uncontrolled step (a zero sign
    factor requires a zero gain); the gain-pair norm must equal
    ``gamma * bound``.  Steps taken from inside ``region`` are also checked
    against ``|h - x_target| <= |f + f_tilde - x_sign_ref|``.
    """
    s = loop.schedule
    bundle = loop.bundle
    f = bundle.f.body.evaluate_prefix
    ft = bundle.f_tilde.body.evaluate_prefix if bundle.f_tilde is not None else (lambda E: 0.0)
    sign_bad = mag_bad = chain_bad = chain_checked = 0
    flags = []
    states = run.trajectory.states
    for k, (n, lam, lam_t, bound) in enumerate(run.gains):
        E = tuple(float(v) for v in states[k])
        x_next = float(states[k + 1][0])
        F, Ft = f(E), ft(E)
        Fd, Ftd = f(E[s.sigma :]), ft(E[s.sigma_tilde :])
        want = -_sign((F - s.x_sign_ref) * Fd)
        if math.isnan(bound):
            ok_sign = lam == 0.0 and lam_t == 0.0
            ok_mag = ok_sign
        else:
            ok_sign = _sign(lam) == want or (lam == 0.0 and want == 0)
            if s.mode == COMBINED:
                want_t = -_sign((Ft - s.x_sign_ref) * Ftd)
                ok_sign = ok_sign and (_sign(lam_t) == want_t or (lam_t == 0.0 and want_t == 0))
                active = want != 0 or want_t != 0
                expected = s.gamma * abs(F + Ft - s.x_target) / math.hypot(Fd, Ftd) if active else 0.0
            else:
                ok_sign = ok_sign and lam_t == 0.0
                expected = s.gamma * abs(F - s.x_target + s.a) / abs(Fd) if want != 0 else 0.0
            ok_mag = abs(math.hypot(lam, lam_t) - expected) <= mag_tol * max(1.0, expected)
        sign_bad += not ok_sign
        flags.append(bool(ok_sign))
        mag_bad += not ok_mag
        if region is not None and region.contains(E[: region.dim]):
            chain_checked += 1
            if abs(x_next - s.x_target) > abs(F + Ft - s.x_sign_ref) + chain_tol:
                chain_bad += 1
    return GainCheck(len(run.gains), sign_bad, mag_bad, chain_bad, chain_checked, tuple(flags))


def _closed_loop_equilibrium(loop: ClosedLoop, guess: float, interval, n_scan: int, tol: float) -> float:
    vmap = loop.as_vector_map()
    dim = vmap.dim

    def psi(x):
        return vmap.head((x,) * dim) - x

    roots = [x for x, _ in scan_roots(psi, interval, n_scan, tol)]
    try:
        if abs(psi(guess)) <= tol:
            roots.append(guess)
    except (ExprDomainError, OverflowError):
        pass
    if not roots:
        raise SynthesisError(f"closed loop has no equilibrium in {tuple(interval)}")
    return min(roots, key=lambda r: (abs(r - guess), r))


def _resolve_target(bundle, schedule: GainSchedule, interval, n_scan, tol, max_rounds, a_default: bool):
    ft = bundle.f_tilde
    current = schedule
    x = current.x_target
    for k in range(1, max_rounds + 1):
        if a_default:
            current = replace(current, a=ft((current.x_target,) * ft.order) if ft else 0.0)
        loop = ClosedLoop(bundle, replace(current, rounds=k))
        x_new = _closed_loop_equilibrium(loop, x, interval, n_scan, tol)
        moved = abs(x_new - x)
        x = x_new
        current = replace(current, x_target=x, rounds=k)
        if moved < max(tol, 1e-12):
            if a_default:
                current = replace(current, a=ft((x,) * ft.order) if ft else 0.0)
            return current
    raise SynthesisError(f"closed-loop equilibrium did not settle within {max_rounds} rounds")


def _default_interval(x0p: float) -> tuple[float, float]:
    return (x0p - 1.0, x0p + 1.0)


def synthesize_combined(
    bundle: SystemBundle,
    x_0p: float,
    x_cp: float | None = None,
    sigma: int = 0,
    sigma_tilde: int = 0,
    gamma: float = 0.75,
    denom_tol: float = 1e-100,
    interval: tuple[float, float] | None = None,
    n_scan: int = 401,
    tol: float = 1e-12,
    max_rounds: int = 20,
) -> GainSchedule:
    """Nominal plus incremental feedback.

    When ``x_cp`` is not given it is found by closing the loop at the
    uncontrolled equilibrium and re-solving the closed-loop equilibrium until
    it stops moving.
    """
    if bundle.g is not None or bundle.g_tilde is not None:
        raise OrderHypothesisError("controller parts are synthesized; the bundle must not define g or g_tilde")
    schedule = GainSchedule(COMBINED, float(x_0p), float(x_0p if x_cp is None else x_cp), gamma, sigma,
                            sigma_tilde, denom_tol=denom_tol)
    if x_cp is not None:
        return schedule
    interval = interval or _default_interval(x_0p)
    return _resolve_target(bundle, schedule, interval, n_scan, tol, max_rounds, False)


def synthesize_nominal_only(
    bundle: SystemBundle,
    x_0p: float,
    x_c: float | None = None,
    sigma: int = 0,
    gamma: float = 0.75,
    a: float | None = None,
    b: float | None = None,
    denom_tol: float = 1e-100,
    interval: tuple[float, float] | None = None,
    n_scan: int = 401,
    tol: float = 1e-12,
    max_rounds: int = 20,
) -> GainSchedule:
    """Single feedback on f tolerating a small perturbation f_tilde.

    ``a`` and ``b`` default to ``f_tilde`` evaluated at the controlled and
    uncontrolled equilibria.
    """
    if bundle.g is not None or bundle.g_tilde is not None:
        raise OrderHypothesisError("controller parts are synthesized; the bundle must not define g or g_tilde")
    if bundle.order_of("f_tilde") > bundle.order_of("f"):
        raise OrderHypothesisError("nominal_only feedback needs order(f_tilde) <= order(f)")
    ft = bundle.f_tilde
    b_val = b if b is not None else (ft((float(x_0p),) * ft.order) if ft else 0.0)
    target = float(x_0p if x_c is None else x_c)
    a_val = a if a is not None else (ft((target,) * ft.order) if ft else 0.0)
    schedule = GainSchedule(
        NOMINAL_ONLY, float(x_0p), target, gamma, sigma, 0, a_val, b_val, denom_tol,
        a_rule="given" if a is not None else "f_tilde(x_c)",
        b_rule="given" if b is not None else "f_tilde(x_0p)",
    )
    if x_c is not None:
        return schedule
    interval = interval or _default_interval(x_0p)
    return _resolve_target(bundle, schedule, interval, n_scan, tol, max_rounds, a is None)


def close_loop(bundle: SystemBundle, schedule: GainSchedule) -> ClosedLoop:
    return ClosedLoop(bundle, schedule)


@dataclass(frozen=True)
class SmallnessReport:
    beta_tilde: float
    alpha_tilde: float
    admissible: bool
    beta_limit: float


def verify_smallness(
    bundle: SystemBundle,
    x_c: float,
    x_0p: float,
    region: RegionSpec,
    a: float,
    b: float,
    beta: float,
    alpha: float,
    samples: np.ndarray | None = None,
) -> SmallnessReport:
    """Smallest inflation factors that make the perturbation bounds hold on the samples.

    ``beta_tilde`` is the least value with ``|f_tilde(X) - a| <= beta * beta_tilde * ||X - X_c||``
    and ``alpha_tilde`` likewise with ``b``, ``alpha`` and ``X_0p``.  Admissible
    when ``alpha_tilde <= 1`` and ``beta_tilde < 1/beta - 1``.
    """
    if samples is None:
        samples = sample_region(region)
    ft = bundle.f_tilde
    bt = at = 0.0
    for P in samples:
        X = tuple(float(v) for v in P)
        val = ft.body.evaluate_prefix(X) if ft is not None else 0.0
        dc = max(abs(v - x_c) for v in X)
        d0 = max(abs(v - x_0p) for v in X)
        if dc >= region.r_excl and dc > 0.0:
            bt = max(bt, _quotient(abs(val - a), beta * dc))
        if d0 >= region.r_excl and d0 > 0.0:
            at = max(at, _quotient(abs(val - b), alpha * d0))
    limit = math.inf if beta == 0 else 1.0 / beta - 1.0
    return SmallnessReport(bt, at, at <= 1.0 and bt < limit, limit)


def _quotient(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    return math.inf if den == 0.0 else num / den


@dataclass(frozen=True)
class ShiftBoundReport:
    ok: bool
    margin: float
    threshold: float
    min_distance: float
    strict_ok: bool  # reading where the infimum runs up to the equilibrium itself
    note: str = ""


def verify_shift_bound(
    delta: float,
    alpha: float,
    beta: float,
    points: np.ndarray | RegionSpec,
    reference: Sequence[float] | float,
    r_excl: float | None = None,
) -> ShiftBoundReport:
    """Whether the equilibrium shift is small against the expansion/contraction gap.

    Checks ``|delta| <= (alpha - beta) / beta * min ||X - X_ref||`` over the
    points at distance at least ``r_excl`` from the reference.
    """
    if isinstance(points, RegionSpec):
        r_excl = points.r_excl if r_excl is None else r_excl
        points = sample_region(points)
    r_excl = 0.0 if r_excl is None else r_excl
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ref = np.broadcast_to(np.asarray(reference, dtype=float), (pts.shape[1],))
    d = np.max(np.abs(pts - ref), axis=1)
    d = d[d >= r_excl]
    d = d[d > 0.0]
    min_d = float(d.min()) if d.size else 0.0
    strict = delta == 0.0
    if not alpha > beta or not beta > 0.0:
        return ShiftBoundReport(False, -math.inf, 0.0, min_d, strict, "requires alpha > beta > 0")
    threshold = (alpha - beta) / beta * min_d
    margin = threshold - abs(delta)
    return ShiftBoundReport(margin >= 0.0, margin, threshold, min_d, strict)
