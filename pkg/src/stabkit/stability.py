"""
Sampled growth certificates and stability verdicts.

A certificate bounds the one-step quotient ``|h(X) - x_bar| / ||X - X_bar||_inf``
from below (alpha) and above (beta) over points sampled from a region.
``alpha > 1`` is evidence of expansion away from the equilibrium,
``beta < 1`` together with invariance of the region is evidence of
contraction towards it.  All bounds are sampled, not proven.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .equilibria import EquilibriumPoint, inf_norm
from .expr import ExprDomainError
from .system import VectorMap, iterate


class OrderMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned region: an infinity-norm ball or a box.

    ``r_excl`` removes sampled points within that distance of ``reference``
    (defaults: ``1e-6 * radius`` and the center).
    """

    center: tuple[float, ...]
    radius: float | None = None
    lo: tuple[float, ...] | None = None
    hi: tuple[float, ...] | None = None
    sample_count: int = 1000
    seed: int = 0
    r_excl: float | None = None
    reference: tuple[float, ...] | None = None

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        object.__setattr__(self, "center", center)
        if self.radius is not None:
            if not self.radius > 0:
                raise ValueError("radius must be positive")
            if self.lo is not None or self.hi is not None:
                raise ValueError("give either a radius or box bounds, not both")
        else:
            if self.lo is None or self.hi is None:
                raise ValueError("a box needs both lo and hi")
            lo = tuple(float(v) for v in self.lo)
            hi = tuple(float(v) for v in self.hi)
            if len(lo) != len(center) or len(hi) != len(center) or any(a >= b for a, b in zip(lo, hi)):
                raise ValueError("box bounds must satisfy lo < hi componentwise")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if self.r_excl is None:
            object.__setattr__(self, "r_excl", 1e-6 * self.size)
        if not 0 <= self.r_excl < self.size:
            raise ValueError("r_excl must lie in [0, radius)")
        ref = center if self.reference is None else tuple(float(v) for v in self.reference)
        if len(ref) != len(center):
            raise ValueError("reference point has the wrong dimension")
        object.__setattr__(self, "reference", ref)

    @classmethod
    def ball(cls, center, radius, **kw) -> "RegionSpec":
        return cls(tuple(np.atleast_1d(center)), radius=radius, **kw)

    @classmethod
    def box(cls, lo, hi, **kw) -> "RegionSpec":
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        return cls(tuple(0.5 * (lo + hi)), lo=tuple(lo), hi=tuple(hi), **kw)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def shape(self) -> str:
        return "ball" if self.radius is not None else "box"

    @property
    def size(self) -> float:
        if self.radius is not None:
            return float(self.radius)
        return 0.5 * max(b - a for a, b in zip(self.lo, self.hi))

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.array(self.center)
        if self.radius is not None:
            return c - self.radius, c + self.radius
        return np.array(self.lo), np.array(self.hi)

    def contains(self, X: Sequence[float], atol: float = 0.0) -> bool:
        lo, hi = self.bounds
        X = np.asarray(X, dtype=float)
        return bool(np.all(X >= lo - atol) and np.all(X <= hi + atol))

    def with_reference(self, reference) -> "RegionSpec":
        return RegionSpec(
            self.center, self.radius, self.lo, self.hi, self.sample_count, self.seed,
            self.r_excl, tuple(np.atleast_1d(np.asarray(reference, float))),
        )

    def face_probes(self) -> np.ndarray:
        lo, hi = self.bounds
        c = np.array(self.center)
        probes = []
        for i in range(self.dim):
            for end in (lo[i], hi[i]):
                p = c.copy()
                p[i] = end
                probes.append(p)
        return np.array(probes)


def sample_region(S: RegionSpec) -> np.ndarray:
    """Face midpoints followed by ``sample_count`` seeded uniform draws.

    Points within ``r_excl`` (infinity norm) of the reference are dropped.
    """
    ref = np.array(S.reference)
    lo, hi = S.bounds

    def keep(P):
        return np.max(np.abs(P - ref), axis=1) >= S.r_excl

    probes = S.face_probes()
    probes = probes[keep(probes)]
    rng = np.random.default_rng(S.seed)
    draws = []
    need = S.sample_count
    while need > 0:
        batch = rng.uniform(lo, hi, size=(max(need, 16), S.dim))
        batch = batch[keep(batch)][:need]
        draws.append(batch)
        need -= len(batch)
    return np.vstack([probes, *draws])


@dataclass(frozen=True)
class GrowthCertificate:
    label: str
    equilibrium: tuple[float, ...]
    alpha: float
    beta: float
    alpha_witness: tuple[float, ...]
    beta_witness: tuple[float, ...]
    sample_count: int
    skipped: int
    alpha_tilde: float | None = None
    beta_tilde: float | None = None

    def inflation_factors(self, n: int) -> tuple[float, float]:
        """Products of the constant per-step bounds over n steps."""
        return self.alpha**n, self.beta**n

    @property
    def alpha_inflated(self) -> float | None:
        return None if self.alpha_tilde is None else self.alpha * (1.0 - self.alpha_tilde)

    @property
    def beta_inflated(self) -> float | None:
        return None if self.beta_tilde is None else self.beta * (1.0 + self.beta_tilde)

    @property
    def inflation_admissible(self) -> bool | None:
        if self.alpha_tilde is None or self.beta_tilde is None:
            return None
        limit = math.inf if self.beta == 0 else 1.0 / self.beta - 1.0
        return self.alpha_tilde <= 1.0 and self.beta_tilde < limit


def growth_quotient(vmap: VectorMap, X_bar: Sequence[float], X: Sequence[float]) -> float:
    """``|h(X) - x_bar| / ||X - X_bar||_inf``."""
    X = tuple(float(v) for v in X)
    dist = max(abs(a - b) for a, b in zip(X, X_bar))
    return abs(vmap.head(X) - X_bar[0]) / dist


def growth_certificate(
    vmap: VectorMap,
    x_bar: float | EquilibriumPoint | Sequence[float],
    S: RegionSpec,
    inflation: tuple[float, float] | None = None,
    samples: np.ndarray | None = None,
) -> GrowthCertificate:
    """Sampled lower/upper bounds of the growth quotient about ``x_bar``.

    Samples closer than ``S.r_excl`` to the equilibrium, or where the map
    cannot be evaluated, are skipped and counted.
    """
    X_bar = _as_state(x_bar, vmap.dim)
    if samples is None:
        samples = sample_region(S)
    if samples.shape[1] != vmap.dim:
        raise OrderMismatchError(f"region has dimension {samples.shape[1]}, map has {vmap.dim}")
    alpha, beta = math.inf, -math.inf
    wa = wb = None
    skipped = 0
    Xb = np.array(X_bar)
    for P in samples:
        X = tuple(float(v) for v in P)
        if np.max(np.abs(P - Xb)) < S.r_excl or np.max(np.abs(P - Xb)) == 0.0:
            skipped += 1
            continue
        try:
            q = growth_quotient(vmap, X_bar, X)
        except (ExprDomainError, OverflowError):
            skipped += 1
            continue
        if q < alpha:
            alpha, wa = q, X
        if q > beta:
            beta, wb = q, X
    if wa is None:
        raise ValueError("no usable samples for the certificate")
    at, bt = (None, None) if inflation is None else (float(inflation[0]), float(inflation[1]))
    return GrowthCertificate(vmap.label, X_bar, alpha, beta, wa, wb, len(samples) - skipped, skipped, at, bt)


def _as_state(x_bar, dim: int) -> tuple[float, ...]:
    if isinstance(x_bar, EquilibriumPoint):
        return (x_bar.value,) * dim
    arr = np.atleast_1d(np.asarray(x_bar, dtype=float))
    if arr.size == 1:
        return (float(arr[0]),) * dim
    if arr.size != dim:
        raise OrderMismatchError(f"equilibrium has dimension {arr.size}, map has {dim}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class InvarianceResult:
    passed: bool
    checked: int
    witness: tuple[float, ...] | None = None
    image: tuple[float, ...] | None = None


def check_invariance(vmap: VectorMap, S: RegionSpec, samples: np.ndarray | None = None) -> InvarianceResult:
    """Whether every sampled point (face probes included) is mapped back into S."""
    if samples is None:
        samples = sample_region(S)
    for P in samples:
        X = tuple(float(v) for v in P)
        try:
            Y = vmap(X)
        except (ExprDomainError, OverflowError):
            return InvarianceResult(False, 0, X, None)
        if not S.contains(Y):
            return InvarianceResult(False, len(samples), X, tuple(Y))
    return InvarianceResult(True, len(samples))


class StabilityVerdict(enum.Enum):
    ASYMPTOTICALLY_STABLE = "AsymptoticallyStable"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class VerdictRecord:
    verdict: StabilityVerdict
    certificate: GrowthCertificate
    invariance: InvarianceResult
    note: str = ""

    @property
    def sample_count(self) -> int:
        return self.certificate.sample_count


def verdict_from_evidence(cert: GrowthCertificate, inv: InvarianceResult) -> StabilityVerdict:
    if cert.beta < 1.0 and inv.passed:
        return StabilityVerdict.ASYMPTOTICALLY_STABLE
    if cert.alpha > 1.0:
        return StabilityVerdict.UNSTABLE
    return StabilityVerdict.INCONCLUSIVE


def assess(vmap: VectorMap, x_bar, S: RegionSpec, samples: np.ndarray | None = None) -> VerdictRecord:
    """Certificate, invariance and verdict for a single map."""
    if samples is None:
        samples = sample_region(S)
    cert = growth_certificate(vmap, x_bar, S, samples=samples)
    inv = check_invariance(vmap, S, samples)
    n = cert.sample_count
    return VerdictRecord(verdict_from_evidence(cert, inv), cert, inv, f"certified over {n} samples")


def classify(
    uncontrolled: tuple[VectorMap, float],
    controlled: tuple[VectorMap, float],
    S: RegionSpec,
) -> tuple[VerdictRecord, VerdictRecord]:
    """Verdict pair for an uncontrolled map and its controlled counterpart.

    The uncontrolled side is Unstable iff its alpha exceeds 1; the controlled
    side is AsymptoticallyStable iff its beta is below 1 and it maps the
    sampled region into itself.  Everything else is Inconclusive.
    """
    (u_map, u_bar), (c_map, c_bar) = uncontrolled, controlled
    if u_map.dim != c_map.dim or u_map.dim != S.dim:
        raise OrderMismatchError(
            f"dimensions differ: uncontrolled {u_map.dim}, controlled {c_map.dim}, region {S.dim}"
        )
    samples = sample_region(S)
    n = len(samples)
    u_cert = growth_certificate(u_map, u_bar, S, samples=samples)
    u_inv = check_invariance(u_map, S, samples)
    c_cert = growth_certificate(c_map, c_bar, S, samples=samples)
    c_inv = check_invariance(c_map, S, samples)
    u_verdict = StabilityVerdict.UNSTABLE if u_cert.alpha > 1.0 else StabilityVerdict.INCONCLUSIVE
    if c_cert.beta < 1.0 and c_inv.passed:
        c_verdict = StabilityVerdict.ASYMPTOTICALLY_STABLE
    else:
        c_verdict = StabilityVerdict.INCONCLUSIVE
    note = f"certified over {n} samples"
    return VerdictRecord(u_verdict, u_cert, u_inv, note), VerdictRecord(c_verdict, c_cert, c_inv, note)


@dataclass
class ContractionTrace:
    ratios: np.ndarray  # ||X_n - X_bar|| / ||X_0 - X_bar||, n = 0..N
    rate: float
    expanding: bool
    status: str = "ok"
    trajectory: object = field(default=None, repr=False)


def contraction_trace(vmap: VectorMap, x_bar, X0: Sequence[float], N: int) -> ContractionTrace:
    """Distance ratios along a trajectory and their geometric-mean step rate."""
    X_bar = np.array(_as_state(x_bar, vmap.dim))
    d0 = inf_norm(np.asarray(X0, dtype=float) - X_bar)
    if d0 == 0.0:
        raise ValueError("X0 coincides with the equilibrium")
    traj = iterate(vmap, X0, N)
    dists = np.max(np.abs(traj.states - X_bar), axis=1)
    ratios = dists / d0
    steps = len(ratios) - 1
    if steps == 0:
        rate = math.nan
    elif ratios[-1] == 0.0:
        rate = 0.0
    else:
        rate = float(math.exp(math.log(ratios[-1]) / steps))
    expanding = traj.diverged or (steps > 0 and rate > 1.0)
    return ContractionTrace(ratios, rate, expanding, traj.status, traj)


def chain_bound(beta: float, n: int, dim: int) -> float:
    """Envelope on ``||X_n - X_bar|| / ||X_0 - X_bar||`` implied by a per-step bound beta.

    For scalar recursions this is ``beta**n``; with ``dim`` lags every
    coordinate is renewed once per ``dim`` steps, giving ``beta**(n // dim)``
    when ``beta < 1``.
    """
    if beta >= 1.0:
        return beta**n
    return beta ** (n // dim)
