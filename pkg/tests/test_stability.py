from __future__ import annotations

import numpy as np
import pytest

from stabkit.stability import (
    OrderMismatchError,
    RegionSpec,
    StabilityVerdict,
    assess,
    chain_bound,
    check_invariance,
    classify,
    contraction_trace,
    growth_certificate,
    growth_quotient,
    sample_region,
    verdict_from_evidence,
)
from stabkit.system import SystemBundle, Variant, associate_map, iterate


def vmap(text, order=1, dim=None):
    return associate_map(SystemBundle.from_texts({"f": (text, order)}), Variant.NOMINAL, dim)


def test_sample_region_probes_and_determinism():
    S = RegionSpec.ball((0.0,), 1.0, sample_count=50, seed=4)
    pts = sample_region(S)
    assert pts[:2, 0].tolist() == [-1.0, 1.0]
    assert len(pts) == 52
    assert np.array_equal(pts, sample_region(S))
    assert not np.array_equal(pts, sample_region(RegionSpec.ball((0.0,), 1.0, sample_count=50, seed=5)))


def test_sample_region_exclusion():
    S = RegionSpec.ball((0.0, 0.0), 1.0, sample_count=2000, seed=1, r_excl=0.1)
    pts = sample_region(S)
    assert np.max(np.abs(pts), axis=1).min() >= 0.1
    assert np.all(np.abs(pts) <= 1.0)


def test_box_region():
    S = RegionSpec.box((0.0, -1.0), (2.0, 1.0), sample_count=200, seed=2)
    pts = sample_region(S)
    assert S.center == (1.0, 0.0)
    assert np.all(pts >= [0.0, -1.0]) and np.all(pts <= [2.0, 1.0])


def test_region_validation():
    with pytest.raises(ValueError):
        RegionSpec.ball((0.0,), 0.0)
    with pytest.raises(ValueError):
        RegionSpec.ball((0.0,), 1.0, r_excl=1.0)
    with pytest.raises(ValueError):
        RegionSpec.ball((0.0,), 1.0, sample_count=0)


@pytest.mark.parametrize("text,ratio", [("2*x[1]", 2.0), ("0.5*x[1]", 0.5)])
def test_linear_certificates(text, ratio):
    S = RegionSpec.ball((0.0,), 1.0, sample_count=500, seed=0)
    cert = growth_certificate(vmap(text), 0.0, S)
    assert cert.alpha == pytest.approx(ratio, rel=1e-15)
    assert cert.beta == pytest.approx(ratio, rel=1e-15)


def test_quadratic_certificate_and_witnesses():
    S = RegionSpec.ball((0.0,), 0.5, sample_count=4000, seed=9)
    m = vmap("2*x[1] + 0.1*x[1]^2")
    cert = growth_certificate(m, 0.0, S)
    # oracle: |2 + 0.1x| on |x| <= 0.5 spans [1.95, 2.05]
    assert 1.95 <= cert.alpha <= 1.95 + 1e-3 and 2.05 - 1e-12 <= cert.beta <= 2.05 + 1e-12
    assert growth_quotient(m, cert.equilibrium, cert.alpha_witness) == cert.alpha
    assert growth_quotient(m, cert.equilibrium, cert.beta_witness) == cert.beta


def test_more_samples_widen_the_bounds():
    m = vmap("0.5*x[1] + 0.3*sin(x[2])", 2)
    small = growth_certificate(m, 0.0, RegionSpec.ball((0.0, 0.0), 1.0, sample_count=100, seed=3))
    big_S = RegionSpec.ball((0.0, 0.0), 1.0, sample_count=2000, seed=3)
    big = growth_certificate(m, 0.0, big_S)
    # the larger run draws a superset of the smaller run's points
    assert big.alpha <= small.alpha and big.beta >= small.beta


def test_inflation_reporting():
    S = RegionSpec.ball((0.0,), 1.0, sample_count=10, seed=0)
    cert = growth_certificate(vmap("0.5*x[1]"), 0.0, S, inflation=(0.2, 0.5))
    assert cert.alpha_inflated == pytest.approx(0.4)
    assert cert.beta_inflated == pytest.approx(0.75)
    assert cert.inflation_admissible
    assert cert.inflation_factors(3) == pytest.approx((0.125, 0.125))
    cert = growth_certificate(vmap("0.5*x[1]"), 0.0, S, inflation=(0.2, 1.5))
    assert cert.inflation_admissible is False


def test_dimension_mismatch():
    with pytest.raises(OrderMismatchError):
        growth_certificate(vmap("x[1]"), 0.0, RegionSpec.ball((0.0, 0.0), 1.0))


def test_invariance():
    S = RegionSpec.ball((0.0,), 1.0, sample_count=200, seed=0)
    assert check_invariance(vmap("0.5*x[1]"), S).passed
    res = check_invariance(vmap("2*x[1]"), S)
    assert not res.passed and abs(res.image[0]) > 1.0
    assert res.witness == (-1.0,)
    shifted = RegionSpec.ball((3.0,), 0.5, sample_count=200, seed=0)
    assert check_invariance(vmap("x[1]"), shifted).passed


def test_verdict_table():
    S = RegionSpec.ball((0.0,), 1.0, sample_count=100, seed=0)
    assert assess(vmap("0.5*x[1]"), 0.0, S).verdict is StabilityVerdict.ASYMPTOTICALLY_STABLE
    assert assess(vmap("2*x[1]"), 0.0, S).verdict is StabilityVerdict.UNSTABLE
    assert assess(vmap("x[1]"), 0.0, S).verdict is StabilityVerdict.INCONCLUSIVE
    rec = assess(vmap("-0.9*x[1]"), 0.0, S)
    assert verdict_from_evidence(rec.certificate, rec.invariance) is rec.verdict


def test_classify_worked_pair():
    S = RegionSpec.ball((0.0,), 1.0, sample_count=1000, seed=2)
    u, c = classify((vmap("2*x[1]"), 0.0), (vmap("0.5*x[1]"), 0.0), S)
    assert (u.verdict, c.verdict) == (StabilityVerdict.UNSTABLE, StabilityVerdict.ASYMPTOTICALLY_STABLE)
    u, c = classify((vmap("x[1]"), 0.0), (vmap("x[1]"), 0.0), S)
    assert (u.verdict, c.verdict) == (StabilityVerdict.INCONCLUSIVE, StabilityVerdict.INCONCLUSIVE)


def test_classify_shifted_contraction():
    # controlled side contracts at rate 0.7 about 0.1
    S = RegionSpec.ball((0.1,), 0.5, sample_count=1000, seed=2)
    u, c = classify((vmap("2*x[1] - 0.1"), 0.1), (vmap("0.7*x[1] + 0.03"), 0.1), S)
    assert c.verdict is StabilityVerdict.ASYMPTOTICALLY_STABLE
    assert c.certificate.beta == pytest.approx(0.7)
    assert u.verdict is StabilityVerdict.UNSTABLE


def test_classify_dimension_mismatch():
    S = RegionSpec.ball((0.0,), 1.0)
    with pytest.raises(OrderMismatchError):
        classify((vmap("x[1]"), 0.0), (vmap("x[1]", 1, 2), 0.0), S)


def test_contraction_trace():
    tr = contraction_trace(vmap("0.5*x[1]"), 0.0, (1.0,), 10)
    assert tr.ratios.tolist() == [2.0**-n for n in range(11)]
    assert tr.rate == pytest.approx(0.5) and not tr.expanding
    tr = contraction_trace(vmap("2*x[1]"), 0.0, (1.0,), 10)
    assert tr.ratios.tolist() == [2.0**n for n in range(11)] and tr.expanding
    with pytest.raises(ValueError):
        contraction_trace(vmap("2*x[1]"), 0.0, (0.0,), 3)


def test_chain_bound_holds_for_stable_maps():
    m = vmap("0.4*x[1] + 0.2*x[2]", 2)
    S = RegionSpec.ball((0.0, 0.0), 1.0, sample_count=400, seed=5)
    rec = assess(m, 0.0, S)
    assert rec.verdict is StabilityVerdict.ASYMPTOTICALLY_STABLE
    for X0 in sample_region(S)[:32]:
        d = np.max(np.abs(iterate(m, X0, 60).states), axis=1)
        for n in range(61):
            assert d[n] <= chain_bound(rec.certificate.beta, n, 2) * d[0] * (1 + 1e-9)


def test_instability_escape():
    m = vmap("2*x[1] + 0.1*x[1]^2")
    S = RegionSpec.ball((0.0,), 0.5, sample_count=200, seed=8)
    cert = growth_certificate(m, 0.0, S)
    for X0 in sample_region(S)[:40]:
        d = abs(X0[0])
        states = iterate(m, X0, 40).scalars
        for n, x in enumerate(states):
            if not S.contains((x,)):
                break
            assert abs(x) >= cert.alpha**n * d * (1 - 1e-12)
