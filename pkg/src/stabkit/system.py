"""
Composite difference equations and their associate vector maps.

A system is ``x_n = f + f_tilde + g + g_tilde`` where each part is a map of
the most recent samples.  States are stored newest first,
``X = (x_{n-1}, ..., x_{n-m})``, so a component of order ``k`` reads the
first ``k`` coordinates and ignores the rest (the zero-padding lift).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .expr import ExprDomainError, LaggedExpr, parse

LABELS = ("f", "f_tilde", "g", "g_tilde")


class Variant(enum.Enum):
    NOMINAL = "nominal"
    PERTURBED = "perturbed"
    CONTROLLED = "controlled"
    CONTROLLED_PERTURBED = "controlled_perturbed"

    @property
    def components(self) -> tuple[str, ...]:
        return _VARIANT_COMPONENTS[self]


_VARIANT_COMPONENTS = {
    Variant.NOMINAL: ("f",),
    Variant.PERTURBED: ("f", "f_tilde"),
    Variant.CONTROLLED: ("f", "g"),
    Variant.CONTROLLED_PERTURBED: LABELS,
}


def component_labels(selection: Variant | str | Iterable[str]) -> tuple[str, ...]:
    """Normalize a variant, a variant name, or a set of labels to ordered labels."""
    if isinstance(selection, Variant):
        return selection.components
    if isinstance(selection, str):
        if selection in LABELS:
            return (selection,)
        return Variant(selection).components
    chosen = set(selection)
    unknown = chosen - set(LABELS)
    if unknown:
        raise ValueError(f"unknown component labels {sorted(unknown)}")
    return tuple(lab for lab in LABELS if lab in chosen)


def selection_name(selection: Variant | str | Iterable[str]) -> str:
    if isinstance(selection, Variant):
        return selection.value
    labels = component_labels(selection)
    for v in Variant:
        if v.components == labels:
            return v.value
    return "+".join(labels)


@dataclass(frozen=True)
class ComponentMap:
    body: LaggedExpr
    label: str = "f"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")

    @property
    def order(self) -> int:
        return self.body.order

    @classmethod
    def from_text(cls, label: str, text: str, order: int) -> "ComponentMap":
        return cls(parse(text, order), label)

    def __call__(self, X: Sequence[float], n: int = 0) -> float:
        # n is the step index; components are time invariant
        return self.body.evaluate_prefix(X)


@dataclass(frozen=True)
class SystemBundle:
    """The four additive parts of the recursion; absent parts are identically zero."""

    f: ComponentMap
    f_tilde: ComponentMap | None = None
    g: ComponentMap | None = None
    g_tilde: ComponentMap | None = None

    def __post_init__(self):
        for lab in LABELS:
            c = getattr(self, lab)
            if c is not None and c.label != lab:
                object.__setattr__(self, lab, ComponentMap(c.body, lab))

    @classmethod
    def from_texts(cls, texts: Mapping[str, tuple[str, int]]) -> "SystemBundle":
        """Build from ``{"f": ("2*x[1]", 1), "f_tilde": (...), ...}``."""
        unknown = set(texts) - set(LABELS)
        if unknown:
            raise ValueError(f"unknown components {sorted(unknown)}")
        if "f" not in texts:
            raise ValueError("component f is required")
        parts = {lab: ComponentMap.from_text(lab, *texts[lab]) for lab in texts}
        return cls(**parts)

    def component(self, label: str) -> ComponentMap | None:
        return getattr(self, label)

    def order_of(self, label: str) -> int:
        c = getattr(self, label)
        return 0 if c is None else c.order

    @property
    def m(self) -> int:
        return max(self.order_of(lab) for lab in LABELS)

    def order(self, selection) -> int:
        """Order of the sum over the selected (present) components."""
        return max([self.order_of(lab) for lab in component_labels(selection)] + [1])

    def present(self, selection) -> tuple[ComponentMap, ...]:
        return tuple(c for lab in component_labels(selection) if (c := getattr(self, lab)) is not None)

    def head(self, selection) -> Callable[[Sequence[float]], float]:
        """Scalar sum of the selected components as a function of the state."""
        parts = [c.body.evaluate_prefix for c in self.present(selection)]
        if not parts:
            return lambda X: 0.0
        if len(parts) == 1:
            return parts[0]

        def h(X):
            y = parts[0](X)
            for p in parts[1:]:
                y = y + p(X)
            return y

        return h

    def h(self, selection, X: Sequence[float], n: int = 0) -> float:
        return self.head(selection)(X)


@dataclass(frozen=True)
class VectorMap:
    """First-order self-map ``X -> (head(X), shift * X_1, ..., shift * X_{m-1})``.

    ``shift`` counts how many leading lifts were summed into this map: 1 for an
    associate map, 0 for an additive lift.
    """

    dim: int
    head: Callable[[Sequence[float]], float]
    shift: int = 1
    label: str = ""

    def __call__(self, X: Sequence[float], n: int = 0) -> tuple[float, ...]:
        if len(X) != self.dim:
            raise ValueError(f"state has dimension {len(X)}, expected {self.dim}")
        first = self.head(X)
        if self.shift == 1:
            return (first, *X[:-1])
        return (first, *(self.shift * v for v in X[:-1]))

    def __add__(self, other: "VectorMap") -> "VectorMap":
        if not isinstance(other, VectorMap):
            return NotImplemented
        if other.dim != self.dim:
            raise ValueError("cannot add vector maps of different dimension")
        a, b = self.head, other.head
        label = "+".join(s for s in (self.label, other.label) if s)
        return VectorMap(self.dim, lambda X: a(X) + b(X), self.shift + other.shift, label)


def _check_dim(c: ComponentMap, m: int) -> None:
    if m < c.order:
        raise ValueError(f"dimension {m} is smaller than the order {c.order} of {c.label}")


def lift_leading(c: ComponentMap, m: int) -> VectorMap:
    """``X -> (c(X_1..X_k), X_1, ..., X_{m-1})``."""
    _check_dim(c, m)
    return VectorMap(m, c.body.evaluate_prefix, 1, c.label)


def lift_additive(c: ComponentMap, m: int) -> VectorMap:
    """``X -> (c(X_1..X_k), 0, ..., 0)``."""
    _check_dim(c, m)
    return VectorMap(m, c.body.evaluate_prefix, 0, c.label)


def associate_map(bundle: SystemBundle, variant, dim: int | None = None) -> VectorMap:
    """Associate vector map of the selected variant.

    ``dim`` defaults to the order of the variant; a larger value pads the
    components with ignored trailing arguments.
    """
    order = bundle.order(variant)
    if dim is None:
        dim = order
    if dim < order:
        raise ValueError(f"dimension {dim} is smaller than the variant order {order}")
    return VectorMap(dim, bundle.head(variant), 1, selection_name(variant))


def lifted_sum(bundle: SystemBundle, variant, dim: int | None = None) -> VectorMap:
    """The same map assembled as one leading lift of f plus additive lifts of the rest."""
    order = bundle.order(variant)
    dim = order if dim is None else dim
    parts = bundle.present(variant)
    total = lift_leading(parts[0], dim)
    for c in parts[1:]:
        total = total + lift_additive(c, dim)
    return total


@dataclass
class Trajectory:
    states: np.ndarray  # (N+1, m), row n is X_n
    status: str = "ok"  # or "diverged-nonfinite"
    message: str = ""
    vmap: VectorMap | None = field(default=None, repr=False)
    label: str = ""

    @property
    def scalars(self) -> np.ndarray:
        """First coordinates x_0, x_1, ..., x_N."""
        return self.states[:, 0]

    @property
    def diverged(self) -> bool:
        return self.status != "ok"

    def __len__(self) -> int:
        return len(self.states)


def iterate(vmap: VectorMap, X0: Sequence[float], N: int) -> Trajectory:
    """Apply ``vmap`` N times; a non-finite step truncates the run."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    X = tuple(float(v) for v in X0)
    if len(X) != vmap.dim:
        raise ValueError(f"initial state has dimension {len(X)}, expected {vmap.dim}")
    states = [X]
    status, message = "ok", ""
    for _ in range(N):
        try:
            X = vmap(X)
        except (ExprDomainError, OverflowError) as exc:
            status, message = "diverged-nonfinite", str(exc)
            break
        if not math.isfinite(X[0]):
            status, message = "diverged-nonfinite", "non-finite state"
            break
        states.append(X)
    return Trajectory(np.array(states, dtype=float), status, message, vmap, vmap.label)


@dataclass
class ScalarRun:
    values: np.ndarray  # x_1..x_N (truncated on divergence)
    status: str = "ok"
    message: str = ""


def scalar_run(bundle: SystemBundle, variant, history: Sequence[float], N: int) -> ScalarRun:
    """Run the scalar recursion; ``history`` is ``(x_0, x_{-1}, ..., x_{1-m})``."""
    m = len(history)
    if m < bundle.order(variant):
        raise ValueError(f"history needs at least {bundle.order(variant)} values")
    h = bundle.head(variant)
    seq = [float(v) for v in reversed(history)]  # chronological
    out = []
    status, message = "ok", ""
    for _ in range(N):
        window = seq[-1 : -m - 1 : -1]
        try:
            x = h(window)
        except (ExprDomainError, OverflowError) as exc:
            status, message = "diverged-nonfinite", str(exc)
            break
        seq.append(x)
        out.append(x)
    return ScalarRun(np.array(out, dtype=float), status, message)


@dataclass(frozen=True)
class OrderReport:
    common_eq_uncontrolled_possible: bool
    common_eq_all_possible: bool
    orders: dict


def order_compatibility(bundle: SystemBundle) -> OrderReport:
    """Whether variants can share an equilibrium, judged from the orders alone."""
    m0 = bundle.order_of("f")
    mt = bundle.order_of("f_tilde")
    mg = bundle.order_of("g")
    mgt = bundle.order_of("g_tilde")
    uncontrolled = m0 == max(m0, mt)
    every = uncontrolled and m0 == max(m0, mg, mgt)
    return OrderReport(uncontrolled, every, {"f": m0, "f_tilde": mt, "g": mg, "g_tilde": mgt})
