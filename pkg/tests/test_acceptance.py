"""One test per acceptance criterion; each records a PASS/FAIL line for the summary."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from conftest import record
from stabkit.cli import main
from stabkit.control import GainSchedule, ClosedLoop, close_loop, synthesize_combined, synthesize_nominal_only
from stabkit.control import verify_gain_trace, verify_smallness, COMBINED, NOMINAL_ONLY
from stabkit.equilibria import (
    Classification,
    detect_oscillation,
    estimate_error_curve,
    find_equilibria,
    jacobian,
    linear_estimate,
    solve_shift,
)
from stabkit.stability import (
    RegionSpec,
    StabilityVerdict,
    assess,
    classify,
    growth_certificate,
    sample_region,
)
from stabkit.system import SystemBundle, Variant, associate_map, iterate, scalar_run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def bundle(**parts):
    return SystemBundle.from_texts(parts)


def random_polynomial(rng, order: int) -> str:
    terms = []
    for _ in range(rng.integers(1, 5)):
        c = rng.uniform(-1, 1)
        lags = rng.integers(1, order + 1, size=rng.integers(0, 3))
        terms.append("*".join([repr(float(c))] + [f"x[{j}]" for j in lags]))
    return " + ".join(terms)


def bisect_root(fn, lo, hi, iters=200):
    flo = fn(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_01_scalar_vector_equivalence():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = 0
    count = 60
    for _ in range(count):
        parts = {}
        for lab in ("f", "f_tilde", "g", "g_tilde"):
            if lab == "f" or rng.random() < 0.6:
                k = int(rng.integers(1, 5))
                parts[lab] = (random_polynomial(rng, k), k)
        b = bundle(**parts)
        m = b.m
        hist = tuple(rng.uniform(-1, 1, size=m))
        run = scalar_run(b, Variant.CONTROLLED_PERTURBED, hist, 500)
        traj = iterate(associate_map(b, Variant.CONTROLLED_PERTURBED, m), hist, 500)
        same = run.status == traj.status and run.values.tolist() == traj.scalars[1:].tolist()
        mismatches += not same
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 5.0
    record(1, ok, f"{count} bundles, {mismatches} mismatches, {elapsed:.2f} s")
    assert ok


def test_criterion_02_companion_structure():
    rng = np.random.default_rng(7)
    worst_row = 0.0
    shift_bad = 0
    for _ in range(100):
        m = int(rng.integers(1, 6))
        a = rng.uniform(-1, 1, size=m)
        text = " + ".join(f"{float(c)!r}*x[{j + 1}]" for j, c in enumerate(a))
        vmap = associate_map(bundle(f=(text, m)), Variant.NOMINAL)
        X = tuple(rng.uniform(-5, 5, size=m))
        J = jacobian(vmap, X).matrix
        shift_bad += not np.array_equal(J[1:], np.eye(m)[:-1])
        worst_row = max(worst_row, float(np.max(np.abs(J[0] - a))))
        # a nonlinear map at the same point must keep the exact shift rows
        nl = associate_map(bundle(f=(f"sin({text}) * x[{m}]^2", m)), Variant.NOMINAL)
        shift_bad += not np.array_equal(jacobian(nl, X).matrix[1:], np.eye(m)[:-1])
    ok = shift_bad == 0 and worst_row <= 1e-8
    record(2, ok, f"shift-row mismatches {shift_bad}, max first-row error {worst_row:.2e}")
    assert ok


def test_criterion_03_affine_exactness():
    worst_est = worst_bound = 0.0
    for a in (0.3, 0.5, 0.9, -0.5):
        for c in (0.1, -0.2):
            b = bundle(f=(f"{a!r}*x[1]", 1), f_tilde=(f"{c!r}", 1))
            est = linear_estimate(b, "nominal_to_perturbed", 0.0)
            oracle = bisect_root(lambda x: a * x + c - x, -10.0, 10.0)
            worst_est = max(worst_est, abs(est.estimate[0] - oracle))
            if a > 0:
                worst_bound = max(worst_bound, abs(est.banach_bound - abs(est.estimate[0] - est.base[0])))
    ok = worst_est <= 1e-9 and worst_bound <= 1e-9
    record(3, ok, f"max estimate error {worst_est:.2e}, max bound gap {worst_bound:.2e}")
    assert ok


def test_criterion_04_quadratic_error_decay():
    fam = lambda eps: bundle(f=("0.5*x[1]", 1), f_tilde=(f"{eps!r}*x[1]^2 + 0.1", 1))
    rows = estimate_error_curve(fam, "nominal_to_perturbed", [1e-2, 5e-3, 2.5e-3], (-1.0, 1.0))
    errs = [r.error for r in rows]
    # oracle: the true root near 0.2 of eps*x^2 - 0.5x + 0.1 = 0 in closed form
    for r in rows:
        exact = (0.5 - np.sqrt(0.25 - 0.4 * r.eps)) / (2 * r.eps)
        assert abs(r.true - exact) < 1e-12
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = all(2.5 <= q <= 6.0 for q in ratios)
    record(4, ok, "error ratios " + ", ".join(f"{q:.4f}" for q in ratios) + " (required in [2.5, 6])")
    assert ok


def test_criterion_05_rank_trichotomy():
    got = [
        solve_shift(np.array([[1.0]]), np.array([0.0]))[0],
        solve_shift(np.array([[1.0]]), np.array([0.1]))[0],
        solve_shift(np.array([[0.5]]), np.array([0.1]))[0],
        linear_estimate(bundle(f=("x[1]", 1), f_tilde=("0", 1)), "nominal_to_perturbed", 0.0).classification,
        linear_estimate(bundle(f=("x[1]", 1), f_tilde=("0.1", 1)), "nominal_to_perturbed", 0.0).classification,
        linear_estimate(bundle(f=("0.5*x[1]", 1), f_tilde=("0.1", 1)), "nominal_to_perturbed", 0.0).classification,
    ]
    want = [Classification.INFINITELY_MANY, Classification.NONE, Classification.UNIQUE] * 2
    ok = got == want
    record(5, ok, ", ".join(c.value for c in got))
    assert ok


def test_criterion_06_verdict_pair():
    start = time.perf_counter()
    b = bundle(f=("2*x[1]", 1))
    loop = close_loop(b, synthesize_combined(b, 0.0, 0.0, gamma=0.75))
    S = RegionSpec.ball((0.0,), 1.0, sample_count=10_000, seed=20240601)
    u, c = classify((associate_map(b, Variant.NOMINAL), 0.0), (loop.as_vector_map(), 0.0), S)
    starts = sample_region(S)[2:34]
    chain_bad = 0
    for X0 in starts:
        xs = np.abs(loop.simulate(tuple(X0), 60).trajectory.scalars)
        bound = 0.51 ** np.arange(len(xs)) * abs(X0[0]) * (1 + 1e-9)
        chain_bad += int(np.sum(xs > bound))
    elapsed = time.perf_counter() - start
    ok = (
        u.certificate.alpha >= 1.99
        and c.certificate.beta <= 0.51
        and (u.verdict, c.verdict) == (StabilityVerdict.UNSTABLE, StabilityVerdict.ASYMPTOTICALLY_STABLE)
        and chain_bad == 0
        and len(starts) == 32
        and elapsed < 5.0
    )
    record(6, ok, f"alpha {u.certificate.alpha:.6g}, beta {c.certificate.beta:.6g}, "
                  f"({u.verdict.value}, {c.verdict.value}), chain violations {chain_bad}, {elapsed:.2f} s")
    assert ok


def test_criterion_07_combined_end_to_end():
    b = bundle(f=("2*x[1]", 1), f_tilde=("0.05*x[1]^2", 1))
    (x0p,) = [p for p in find_equilibria(b, Variant.PERTURBED, (-1.0, 1.0))]
    sched = synthesize_combined(b, x0p.value, sigma=0, sigma_tilde=0, gamma=0.75)
    loop = close_loop(b, sched)
    S = RegionSpec.ball((0.0,), 0.5, sample_count=10_000, seed=99)
    u_cert = growth_certificate(associate_map(b, Variant.PERTURBED), x0p.value, S)
    c_cert = growth_certificate(loop.as_vector_map(), sched.x_target, S)
    violations = 0
    worst = 0.0
    for X0 in sample_region(S)[:40]:
        run = loop.simulate(tuple(X0), 200)
        violations += verify_gain_trace(loop, run, S).violations
        worst = max(worst, abs(run.values[-1] - sched.x_target))
    ok = violations == 0 and c_cert.beta < 1 and u_cert.alpha > 1 and worst <= 1e-8
    record(7, ok, f"gain violations {violations}, alpha {u_cert.alpha:.6g}, beta {c_cert.beta:.6g}, "
                  f"max |x_200 - x_cp| {worst:.2e}")
    assert ok


def test_criterion_08_nominal_only_end_to_end():
    b = bundle(f=("2*x[1]", 1), f_tilde=("0.05*x[1]^2", 1))
    sched = synthesize_nominal_only(b, 0.0, 0.0, sigma=0, gamma=0.75, a=0.0, b=0.0)
    loop = close_loop(b, sched)
    S = RegionSpec.ball((0.0,), 0.5, sample_count=10_000, seed=5)
    beta = growth_certificate(loop.nominal_map(), 0.0, S).beta
    alpha = growth_certificate(associate_map(b, Variant.PERTURBED), 0.0, S).alpha
    small = verify_smallness(b, 0.0, 0.0, S, 0.0, 0.0, beta, alpha)
    # the closed loop realizes 0.5x + 0.05x^2
    realized = max(abs(loop.head((x,)) - (0.5 * x + 0.05 * x * x)) for x in np.linspace(-0.5, 0.5, 101))
    stable = assess(loop.as_vector_map(), 0.0, S).verdict
    ref = scalar_run(b, Variant.PERTURBED, (0.4,), 100)
    zero = ClosedLoop(b, GainSchedule(NOMINAL_ONLY, 0.0, 0.0, gamma=0.0)).simulate((0.4,), 100)
    identical = zero.values.tolist() == ref.values.tolist() and zero.trajectory.status == ref.status
    ok = small.admissible and stable is StabilityVerdict.ASYMPTOTICALLY_STABLE and identical and realized < 1e-15
    record(8, ok, f"beta_tilde {small.beta_tilde:.4g} < {small.beta_limit:.4g}, alpha_tilde {small.alpha_tilde:.4g}, "
                  f"closed loop {stable.value}, zero-gain identical {identical}")
    assert ok


def test_criterion_09_oscillations():
    p2 = bundle(f=("x[2]", 2))
    t2 = iterate(associate_map(p2, Variant.NOMINAL), (1.0, -1.0), 64)
    pat2 = detect_oscillation(t2, 4, 16, 1e-12)
    p4 = bundle(f=("-x[2]", 2))
    t4 = iterate(associate_map(p4, Variant.NOMINAL), (1.0, 0.0), 64)
    pat4 = detect_oscillation(t4, 8, 16, 1e-12)
    ok = (
        pat2 is not None and pat2.period == 2 and pat2.values == (1.0, -1.0) and pat2.max_deviation <= 1e-12
        and pat4 is not None and pat4.period == 4 and pat4.max_deviation <= 1e-12
    )
    record(9, ok, f"period {pat2.period} pattern {pat2.values}; period {pat4.period} pattern {pat4.values}")
    assert ok


def test_criterion_10_determinism(tmp_path):
    cfg = str(CONFIGS / "worked.toml")
    codes = [main(["full", "--config", cfg, "--out", str(tmp_path / d)]) for d in ("a", "b")]
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    csv_same = all(
        (tmp_path / "a" / "trajectories" / f.name).read_bytes() == f.read_bytes()
        for f in (tmp_path / "b" / "trajectories").iterdir()
    )
    ok = codes == [0, 0] and a == b and csv_same
    record(10, ok, f"exit codes {codes}, report bytes identical {a == b}, csv identical {csv_same}")
    assert ok
