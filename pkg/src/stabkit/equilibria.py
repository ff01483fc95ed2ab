"""
Equilibria, limit oscillations and first-order estimates of how they move.

Equilibria are located on the diagonal ``X = (x, ..., x)`` by scanning
``psi(x) = h(x, ..., x) - x`` on a grid and bisecting each bracket.  Linear
estimates solve ``(I - M) dX = V`` where ``M`` is the companion Jacobian of
the perturbed sum at the base point and ``V`` the additive lift of the
perturbing components, classified by rank into unique / infinitely many / no
solution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .expr import ExprDomainError
from .system import (
    SystemBundle,
    Trajectory,
    VectorMap,
    associate_map,
    lift_additive,
    component_labels,
    selection_name,
)


class OrderHypothesisError(ValueError):
    """Component orders do not satisfy the hypothesis of the requested analysis."""


@dataclass(frozen=True)
class EquilibriumPoint:
    value: float
    dim: int
    variant: str
    residual: float

    @property
    def vector(self) -> np.ndarray:
        return np.full(self.dim, self.value)


def _diagonal_residual(head, dim: int) -> Callable[[float], float]:
    def psi(x: float) -> float:
        return head((x,) * dim) - x

    return psi


def _safe(psi, x: float) -> float:
    try:
        return psi(x)
    except (ExprDomainError, OverflowError):
        return math.nan


def _abs_or_inf(psi, x: float) -> float:
    v = _safe(psi, x)
    return math.inf if math.isnan(v) else abs(v)


def _bisect(psi, lo: float, hi: float, flo: float, tol: float, max_iter: int = 2000):
    # run to full floating-point resolution; tol only screens the result
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = _safe(psi, mid)
        if math.isnan(fm):
            return None
        if fm == 0.0:
            return mid
        if (fm < 0.0) == (flo < 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
    return lo if abs(_abs_or_inf(psi, lo)) <= _abs_or_inf(psi, hi) else hi


def scan_roots(
    psi: Callable[[float], float],
    interval: tuple[float, float],
    n_scan: int = 2001,
    tol: float = 1e-12,
) -> list[tuple[float, float]]:
    """Roots of a scalar function on ``interval`` as ``(x, |psi(x)|)`` pairs.

    Sign changes on the grid are bisected; exact grid zeros are kept; interior
    local minima of |psi| without a sign change (touching roots) are refined
    by bounded minimization.  Candidates with ``|psi| > tol`` are dropped and
    those closer than ``10 * tol`` merged.
    """
    a, b = map(float, interval)
    if not a < b:
        raise ValueError("interval must satisfy a < b")
    if n_scan < 2:
        raise ValueError("n_scan must be at least 2")
    xs = np.linspace(a, b, n_scan)
    vals = np.array([_safe(psi, float(x)) for x in xs])

    candidates = [float(x) for x, v in zip(xs, vals) if v == 0.0]
    for i in range(n_scan - 1):
        v0, v1 = vals[i], vals[i + 1]
        if math.isnan(v0) or math.isnan(v1) or v0 == 0.0 or v1 == 0.0:
            continue
        if (v0 < 0.0) != (v1 < 0.0):
            r = _bisect(psi, float(xs[i]), float(xs[i + 1]), float(v0), tol)
            if r is not None:
                candidates.append(r)
    absv = np.abs(vals)
    for i in range(1, n_scan - 1):
        if np.isnan(absv[i - 1 : i + 2]).any() or vals[i] == 0.0:
            continue
        if absv[i] <= absv[i - 1] and absv[i] <= absv[i + 1]:
            if (vals[i - 1] < 0) != (vals[i + 1] < 0):
                continue
            res = minimize_scalar(
                lambda x: _abs_or_inf(psi, x),
                bounds=(float(xs[i - 1]), float(xs[i + 1])),
                method="bounded",
                options={"xatol": 1e-14},
            )
            candidates.append(float(res.x))

    roots: list[tuple[float, float]] = []
    for x in sorted(candidates):
        r = _abs_or_inf(psi, x)
        if not r <= tol:
            continue  # poles, shallow minima and other spurious brackets
        if roots and abs(x - roots[-1][0]) <= 10 * tol:
            if r < roots[-1][1]:
                roots[-1] = (x, r)
            continue
        roots.append((x, r))
    return roots


def find_equilibria(
    bundle: SystemBundle,
    variant,
    interval: tuple[float, float],
    n_scan: int = 2001,
    tol: float = 1e-12,
) -> list[EquilibriumPoint]:
    """Equilibria of ``variant`` in ``interval``, sorted ascending.

    Roots of ``psi(x) = h(x, ..., x) - x`` located by ``scan_roots``; an empty
    list means none was detected on the grid.
    """
    dim = bundle.order(variant)
    psi = _diagonal_residual(bundle.head(variant), dim)
    name = selection_name(variant)
    return [EquilibriumPoint(x, dim, name, r) for x, r in scan_roots(psi, interval, n_scan, tol)]


def check_equilibrium(bundle: SystemBundle, variant, x_bar: float, tol: float = 1e-12) -> tuple[bool, float]:
    """``(|h(x, ..., x) - x| <= tol, residual)``; evaluation errors propagate."""
    dim = bundle.order(variant)
    r = abs(bundle.head(variant)((float(x_bar),) * dim) - float(x_bar))
    return r <= tol, r


# -- oscillations ------------------------------------------------------------


@dataclass(frozen=True)
class OscillationPattern:
    """Periodic pattern; ``values[i]`` is the sample at steps ``n = k*period + i``."""

    period: int
    values: tuple[float, ...]
    max_deviation: float

    def same_cycle(self, other: Sequence[float], tol: float = 0.0) -> bool:
        """True if ``other`` is a cyclic rotation of this pattern."""
        other = tuple(other)
        if len(other) != self.period:
            return False
        for shift in range(self.period):
            rotated = self.values[shift:] + self.values[:shift]
            if all(abs(u - v) <= tol for u, v in zip(rotated, other)):
                return True
        return False

    def as_equilibrium(self, dim: int, variant: str = "") -> EquilibriumPoint:
        if self.period != 1:
            raise ValueError("only period-1 patterns are equilibria")
        return EquilibriumPoint(self.values[0], dim, variant, self.max_deviation)


def replay_deviation(vmap: VectorMap, values: Sequence[float]) -> float:
    """Max deviation after running the recursion one period from the pattern itself."""
    p = len(values)
    state = tuple(values[(-1 - j) % p] for j in range(vmap.dim))
    dev = 0.0
    for i in range(p):
        state = vmap(state)
        dev = max(dev, abs(state[0] - values[i]))
    return dev


def detect_oscillation(
    traj: Trajectory,
    max_period: int,
    window: int,
    tol: float,
    vmap: VectorMap | None = None,
) -> OscillationPattern | None:
    """Smallest period ``p <= max_period`` that the trajectory tail repeats with.

    The candidate is accepted only if replaying it through the recursion
    reproduces it within ``tol``.
    """
    if window < 2 * max_period:
        raise ValueError("window must be at least twice max_period")
    xs = traj.scalars
    if len(xs) < window + max_period:
        raise ValueError(f"trajectory too short: need {window + max_period} samples, have {len(xs)}")
    vmap = vmap if vmap is not None else traj.vmap
    N = len(xs) - 1
    tail = xs[-window:]
    for p in range(1, max_period + 1):
        if not np.all(np.abs(tail - xs[-window - p : len(xs) - p]) <= tol):
            continue
        values = [0.0] * p
        for n in range(N - p + 1, N + 1):
            values[n % p] = float(xs[n])
        dev = replay_deviation(vmap, values) if vmap is not None else 0.0
        if dev <= tol:
            return OscillationPattern(p, tuple(values), dev)
    return None


# -- companion jacobian ------------------------------------------------------


@dataclass(frozen=True)
class CompanionMatrix:
    matrix: np.ndarray

    @property
    def gradient(self) -> np.ndarray:
        return self.matrix[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def jacobian(vmap: VectorMap, X: Sequence[float], h_rel: float = 1e-6, h_abs: float = 1e-6) -> CompanionMatrix:
    """Companion Jacobian: central differences for the first row, exact shift rows below."""
    X = [float(v) for v in X]
    m = vmap.dim
    if len(X) != m:
        raise ValueError(f"point has dimension {len(X)}, expected {m}")
    J = np.zeros((m, m))
    for j in range(m):
        step = max(h_abs, h_rel * abs(X[j]))
        up, down = list(X), list(X)
        up[j] = X[j] + step
        down[j] = X[j] - step
        width = up[j] - down[j]
        J[0, j] = (vmap.head(up) - vmap.head(down)) / width
    for i in range(1, m):
        J[i, i - 1] = float(vmap.shift)
    return CompanionMatrix(J)


# -- linear estimates --------------------------------------------------------


class Classification(enum.Enum):
    UNIQUE = "unique"
    INFINITELY_MANY = "infinitelyMany"
    NONE = "none"


def _orders(bundle: SystemBundle):
    return (bundle.order_of(lab) for lab in ("f", "f_tilde", "g", "g_tilde"))


def _nominal_to_perturbed(bundle):
    m0, mt, _, _ = _orders(bundle)
    return max(m0, mt) == m0


def _nominal_to_controlled(bundle):
    m0, _, mg, _ = _orders(bundle)
    return max(m0, mg) == m0


def _controlled_to_corrected(bundle):
    m0, mt, mg, mgt = _orders(bundle)
    return mgt <= max(m0, mt, mg)


def _nominal_to_controlled_perturbed(bundle):
    m0, mt, mg, _ = _orders(bundle)
    return max(m0, mt, mg) == m0


@dataclass(frozen=True)
class EstimateCase:
    name: str
    base: tuple[str, ...]
    perturbing: tuple[str, ...]
    hypothesis: Callable[[SystemBundle], bool] = field(repr=False)
    requirement: str = ""


ESTIMATE_CASES = {
    c.name: c
    for c in (
        EstimateCase("nominal_to_perturbed", ("f",), ("f_tilde",), _nominal_to_perturbed,
                     "order(f) must equal max(order(f), order(f_tilde))"),
        EstimateCase("nominal_to_controlled", ("f",), ("g",), _nominal_to_controlled,
                     "order(f) must equal max(order(f), order(g))"),
        EstimateCase("controlled_to_corrected", ("f", "f_tilde", "g"), ("g_tilde",), _controlled_to_corrected,
                     "order(g_tilde) must not exceed max(order(f), order(f_tilde), order(g))"),
        EstimateCase("nominal_to_controlled_perturbed", ("f",), ("f_tilde", "g"), _nominal_to_controlled_perturbed,
                     "order(f) must equal max(order(f), order(f_tilde), order(g))"),
    )
}


def resolve_case(base, perturbing=None) -> EstimateCase:
    """Look up an estimate case by name or by its (base, perturbing) label sets."""
    if isinstance(base, EstimateCase):
        return base
    if perturbing is None:
        try:
            return ESTIMATE_CASES[base]
        except KeyError:
            raise ValueError(f"unknown estimate case {base!r}; choose from {sorted(ESTIMATE_CASES)}") from None
    b, p = component_labels(base), component_labels(perturbing)
    for case in ESTIMATE_CASES.values():
        if case.base == b and case.perturbing == p:
            return case
    raise ValueError(f"no estimate case for base {b} perturbed by {p}")


def check_case_hypothesis(bundle: SystemBundle, case: EstimateCase) -> None:
    if not case.hypothesis(bundle):
        raise OrderHypothesisError(f"{case.name}: {case.requirement}")


@dataclass(frozen=True)
class LinearEstimate:
    case: str
    base: np.ndarray
    matrix: np.ndarray
    residual: np.ndarray
    estimate: np.ndarray | None
    classification: Classification
    rank: int
    rank_augmented: int
    banach_bound: float | None

    @property
    def shift(self) -> np.ndarray | None:
        return None if self.estimate is None else self.estimate - self.base


def inf_norm(A: np.ndarray) -> float:
    """Induced infinity norm (max absolute row sum); plain max-abs for vectors."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        return float(np.max(np.abs(A))) if A.size else 0.0
    return float(np.max(np.sum(np.abs(A), axis=1)))


def _rank(A: np.ndarray, tol: float) -> int:
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > tol))


def solve_shift(M: np.ndarray, V: np.ndarray, rank_tol: float | None = None):
    """Solve ``(I - M) d = V`` and classify the system by rank.

    Returns ``(classification, d or None, rank, augmented_rank)``.  For
    infinitely many solutions the least-norm one is returned.  The default
    threshold is ``1e-9 * max(1, ||M||_inf)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    V = np.asarray(V, dtype=float).reshape(-1)
    m = M.shape[0]
    A = np.eye(m) - M
    if rank_tol is None:
        rank_tol = 1e-9 * max(1.0, inf_norm(M))
    r = _rank(A, rank_tol)
    ra = _rank(np.column_stack([A, V]), rank_tol)
    if r == m:
        return Classification.UNIQUE, np.linalg.solve(A, V), r, ra
    if ra == r:
        U, s, Vt = np.linalg.svd(A)
        keep = s > rank_tol
        d = Vt[keep].T @ ((U[:, keep].T @ V) / s[keep])
        return Classification.INFINITELY_MANY, d, r, ra
    return Classification.NONE, None, r, ra


def linear_estimate(
    bundle: SystemBundle,
    case,
    base_point: EquilibriumPoint | float,
    rank_tol: float | None = None,
    h_rel: float = 1e-6,
    h_abs: float = 1e-6,
    base_tol: float | None = 1e-8,
) -> LinearEstimate:
    """First-order estimate of the equilibrium of ``base + perturbing``.

    ``case`` is a name from ``ESTIMATE_CASES`` (or an ``EstimateCase``).  The
    base point must be an equilibrium of the base components; pass
    ``base_tol=None`` to skip that check.
    """
    case = resolve_case(case)
    check_case_hypothesis(bundle, case)
    target = component_labels(case.base + case.perturbing)
    dim = bundle.order(target)
    x_bar = base_point.value if isinstance(base_point, EquilibriumPoint) else float(base_point)
    X_bar = (x_bar,) * dim
    if base_tol is not None:
        r = abs(bundle.head(case.base)(X_bar) - x_bar)
        if r > base_tol * max(1.0, abs(x_bar)):
            raise ValueError(f"base point {x_bar} is not an equilibrium of {case.base} (residual {r:.3g})")

    # difference each component on its own so constant terms add no rounding
    M = np.eye(dim, k=-1)
    for c in bundle.present(target):
        M[0] += jacobian(lift_additive(c, dim), X_bar, h_rel, h_abs).gradient
    V = np.zeros(dim)
    V[0] = bundle.head(case.perturbing)(X_bar)
    cls, d, r, ra = solve_shift(M, V, rank_tol)
    base = np.array(X_bar)
    norm_M = inf_norm(M)
    bound = inf_norm(V) / (1.0 - norm_M) if norm_M < 1.0 else None
    return LinearEstimate(
        case=case.name,
        base=base,
        matrix=M,
        residual=V,
        estimate=None if d is None else base + d,
        classification=cls,
        rank=r,
        rank_augmented=ra,
        banach_bound=bound,
    )


@dataclass(frozen=True)
class ErrorRow:
    eps: float
    base: float | None
    estimate: float | None
    true: float | None
    error: float | None
    flag: str = "ok"


def estimate_error_curve(
    family: Callable[[float], SystemBundle],
    case,
    eps_values: Iterable[float],
    interval: tuple[float, float],
    base_guess: float = 0.0,
    n_scan: int = 2001,
    tol: float = 1e-13,
) -> list[ErrorRow]:
    """Sup-norm error between the linear estimate and the located equilibrium, per eps.

    At each eps the base equilibrium nearest ``base_guess`` is linearized and
    compared with the true perturbed equilibrium nearest the estimate.
    """
    case = resolve_case(case)
    target = case.base + case.perturbing
    rows = []
    for eps in eps_values:
        bundle = family(eps)
        bases = find_equilibria(bundle, case.base, interval, n_scan, tol)
        if not bases:
            rows.append(ErrorRow(eps, None, None, None, None, "missing-base"))
            continue
        base = min(bases, key=lambda p: abs(p.value - base_guess))
        est = linear_estimate(bundle, case, base)
        if est.estimate is None:
            rows.append(ErrorRow(eps, base.value, None, None, None, "no-estimate"))
            continue
        x_hat = float(est.estimate[0])
        trues = find_equilibria(bundle, target, interval, n_scan, tol)
        if not trues:
            rows.append(ErrorRow(eps, base.value, x_hat, None, None, "missing-true"))
            continue
        true = min(trues, key=lambda p: abs(p.value - x_hat))
        err = inf_norm(est.estimate - true.vector)
        rows.append(ErrorRow(eps, base.value, x_hat, true.value, err))
    return rows
