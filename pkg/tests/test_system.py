from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabkit.system import (
    ComponentMap,
    SystemBundle,
    Variant,
    associate_map,
    iterate,
    lift_additive,
    lift_leading,
    lifted_sum,
    order_compatibility,
    scalar_run,
)


def comp(text, order, label="f"):
    return ComponentMap.from_text(label, text, order)


def test_lift_leading():
    assert lift_leading(comp("2*x[1]", 1), 2)((3.0, 5.0)) == (6.0, 3.0)
    assert lift_leading(comp("x[1] + x[2]", 2), 2)((1.0, 1.0)) == (2.0, 1.0)
    assert lift_leading(comp("2*x[1]", 1), 1)((3.0,)) == (6.0,)


def test_lift_additive():
    assert lift_additive(comp("x[1]^2", 1, "f_tilde"), 2)((3.0, 7.0)) == (9.0, 0.0)
    assert lift_additive(comp("0", 1, "g"), 3)((1.0, 2.0, 3.0)) == (0.0, 0.0, 0.0)
    total = lift_leading(comp("x[1]", 1), 3) + lift_additive(comp("x[1]*x[2]", 2, "f_tilde"), 3)
    assert total((2.0, 3.0, 4.0)) == (8.0, 2.0, 3.0)


def test_lifts_reject_small_dimension():
    with pytest.raises(ValueError):
        lift_leading(comp("x[2]", 2), 1)
    with pytest.raises(ValueError):
        lift_additive(comp("x[2]", 2), 1)


def test_associate_map_examples():
    b = SystemBundle.from_texts({"f": ("0.5*x[1]", 1)})
    assert associate_map(b, Variant.NOMINAL)((4.0,)) == (2.0,)
    b = SystemBundle.from_texts({"f": ("0.5*x[1]", 1), "f_tilde": ("0.1", 1)})
    assert associate_map(b, Variant.PERTURBED)((4.0,)) == (2.1,)
    b = SystemBundle.from_texts({"f": ("0.5*x[1] + 0.2*x[2]", 2)})
    y = associate_map(b, Variant.NOMINAL)((1.0, 1.0))
    assert y[0] == pytest.approx(0.7) and y[1] == 1.0


def test_variant_dimension_and_padding():
    b = SystemBundle.from_texts({"f": ("x[1]", 1), "f_tilde": ("x[3]", 3)})
    assert b.m == 3
    assert associate_map(b, Variant.NOMINAL).dim == 1
    assert associate_map(b, Variant.PERTURBED).dim == 3
    assert associate_map(b, Variant.NOMINAL, dim=3)((1.0, 2.0, 3.0)) == (1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        associate_map(b, Variant.PERTURBED, dim=2)


def test_absent_components_are_zero():
    b = SystemBundle.from_texts({"f": ("x[1] + 1", 1)})
    assert associate_map(b, Variant.CONTROLLED_PERTURBED)((2.0,)) == (3.0,)


def test_iterate_geometric():
    b = SystemBundle.from_texts({"f": ("0.5*x[1]", 1)})
    traj = iterate(associate_map(b, Variant.NOMINAL), (8.0,), 3)
    assert traj.scalars.tolist() == [8.0, 4.0, 2.0, 1.0]
    assert iterate(associate_map(b, Variant.NOMINAL), (8.0,), 0).states.tolist() == [[8.0]]


def test_iterate_growth_and_divergence():
    b = SystemBundle.from_texts({"f": ("2*x[1]", 1)})
    traj = iterate(associate_map(b, Variant.NOMINAL), (1.0,), 60)
    assert traj.diverged or abs(traj.scalars[-1]) > 1e15
    b = SystemBundle.from_texts({"f": ("x[1]^2", 1)})
    traj = iterate(associate_map(b, Variant.NOMINAL), (10.0,), 20)
    assert traj.status == "diverged-nonfinite"
    assert np.all(np.isfinite(traj.states))


def test_trajectory_shift_structure():
    b = SystemBundle.from_texts({"f": ("0.3*x[1] - 0.2*x[3]", 3), "f_tilde": ("0.1*x[2]^2", 2)})
    traj = iterate(associate_map(b, Variant.PERTURBED), (0.1, 0.2, 0.3), 25)
    assert np.array_equal(traj.states[1:, 1:], traj.states[:-1, :-1])


def test_scalar_run_examples():
    b = SystemBundle.from_texts({"f": ("0.5*x[1]", 1)})
    assert scalar_run(b, Variant.NOMINAL, [8.0], 3).values.tolist() == [4.0, 2.0, 1.0]
    b = SystemBundle.from_texts({"f": ("x[2]", 2)})
    assert scalar_run(b, Variant.NOMINAL, [-1.0, 1.0], 4).values.tolist() == [1.0, -1.0, 1.0, -1.0]


def test_additivity_of_controlled_perturbed():
    b = SystemBundle.from_texts(
        {"f": ("0.5*x[1]", 1), "f_tilde": ("sin(x[2])", 2), "g": ("-0.1*x[1]^2", 1), "g_tilde": ("0.01*x[3]", 3)}
    )
    direct = associate_map(b, Variant.CONTROLLED_PERTURBED)
    summed = lifted_sum(b, Variant.CONTROLLED_PERTURBED, 3)
    rng = np.random.default_rng(3)
    for X in rng.uniform(-2, 2, size=(50, 3)):
        X = tuple(X)
        assert direct(X) == summed(X)


@pytest.mark.parametrize(
    "orders,expected",
    [
        ({"f": 2, "f_tilde": 3}, (False, False)),
        ({"f": 2, "f_tilde": 1, "g": 2, "g_tilde": 2}, (True, True)),
        ({"f": 2, "f_tilde": 2, "g": 3}, (True, False)),
    ],
)
def test_order_compatibility(orders, expected):
    b = SystemBundle.from_texts({lab: ("0", k) for lab, k in orders.items()})
    rep = order_compatibility(b)
    assert (rep.common_eq_uncontrolled_possible, rep.common_eq_all_possible) == expected


coef = st.floats(min_value=-1, max_value=1, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(coef, min_size=3, max_size=3), st.lists(coef, min_size=2, max_size=2), st.integers(0, 60))
def test_scalar_and_vector_paths_agree(a, hist, N):
    b = SystemBundle.from_texts(
        {"f": (f"{a[0]!r}*x[1] + {a[1]!r}*x[2]", 2), "f_tilde": (f"{a[2]!r}*x[1]*x[2]", 2)}
    )
    run = scalar_run(b, Variant.PERTURBED, hist, N)
    traj = iterate(associate_map(b, Variant.PERTURBED), hist, N)
    assert run.values.tolist() == traj.scalars[1:].tolist()
