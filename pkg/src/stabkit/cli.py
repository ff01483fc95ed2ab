"""Command-line driver: ``stabkit <subcommand> --config run.toml [--out DIR] [--seed N]``.

Exit codes: 0 when every requested verdict was obtained, 2 when a verdict is
Inconclusive (or a synthesized gain broke its constraints), 1 on errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import AnalysisConfig, ConfigError, echo, load_config, state_dim
from .control import (
    COMBINED,
    ClosedLoop,
    GainSchedule,
    SynthesisError,
    synthesize_combined,
    synthesize_nominal_only,
    verify_gain_trace,
    verify_shift_bound,
    verify_smallness,
)
from .equilibria import (
    ESTIMATE_CASES,
    EquilibriumPoint,
    OrderHypothesisError,
    detect_oscillation,
    find_equilibria,
    linear_estimate,
)
from .expr import ExprDomainError
from .report import SCHEMA, ReportSchemaError, diff_reports, dumps, trajectory_csv
from .stability import (
    GrowthCertificate,
    RegionSpec,
    StabilityVerdict,
    VerdictRecord,
    assess,
    classify,
    contraction_trace,
    growth_certificate,
    sample_region,
)
from .system import Variant, associate_map, iterate, order_compatibility

SUBCOMMANDS = ("equilibria", "estimate", "certify", "synthesize", "simulate", "full")
DEFAULT_STARTS = 8
GAIN_CHECK_STARTS = 32


class AnalysisError(RuntimeError):
    """Numeric failure inside one stage of the pipeline."""

    def __init__(self, operation: str, message: str):
        super().__init__(f"{operation}: {message}")
        self.operation = operation


@dataclass
class Outcome:
    report: dict
    files: dict[str, str] = field(default_factory=dict)  # relative path -> text
    exit_code: int = 0


# -- helpers -----------------------------------------------------------------


def uncontrolled_variant(cfg: AnalysisConfig) -> Variant:
    return Variant.PERTURBED if cfg.bundle.f_tilde is not None else Variant.NOMINAL


def controlled_variant(cfg: AnalysisConfig) -> Variant | None:
    b = cfg.bundle
    if b.g is None and b.g_tilde is None:
        return None
    if b.f_tilde is None and b.g_tilde is None:
        return Variant.CONTROLLED
    return Variant.CONTROLLED_PERTURBED


def _variants(cfg: AnalysisConfig) -> list[Variant]:
    out = [Variant.NOMINAL]
    if cfg.bundle.f_tilde is not None:
        out.append(Variant.PERTURBED)
    if cfg.bundle.g is not None:
        out.append(Variant.CONTROLLED)
    if controlled_variant(cfg) is Variant.CONTROLLED_PERTURBED:
        out.append(Variant.CONTROLLED_PERTURBED)
    return out


def _anchor(cfg: AnalysisConfig) -> float:
    c = cfg.region.center
    return 0.0 if c is None else c[0]


def _equilibria(cfg: AnalysisConfig, variant) -> list[EquilibriumPoint]:
    s = cfg.solver
    try:
        return find_equilibria(cfg.bundle, variant, s.interval, s.grid, s.tol)
    except (ExprDomainError, OverflowError) as exc:
        raise AnalysisError("find_equilibria", str(exc)) from None


def _nearest(cfg: AnalysisConfig, variant, anchor: float | None = None) -> EquilibriumPoint:
    eqs = _equilibria(cfg, variant)
    name = variant.value if isinstance(variant, Variant) else str(variant)
    if not eqs:
        raise AnalysisError("find_equilibria", f"no equilibrium of {name} in {list(cfg.solver.interval)}")
    a = _anchor(cfg) if anchor is None else anchor
    return min(eqs, key=lambda p: (abs(p.value - a), p.value))


def _region(cfg: AnalysisConfig, x_ref: float) -> RegionSpec:
    r = cfg.region
    dim = state_dim(cfg)
    center = r.center if r.center is not None else (x_ref,) * dim
    try:
        if r.shape == "ball":
            return RegionSpec.ball(center, r.radius, sample_count=r.samples, seed=r.seed, r_excl=r.r_excl)
        return RegionSpec.box(r.lo, r.hi, reference=center, sample_count=r.samples, seed=r.seed, r_excl=r.r_excl)
    except ValueError as exc:
        raise ConfigError("region", str(exc)) from None


def _starts(cfg: AnalysisConfig, S: RegionSpec, count: int) -> list[tuple[float, ...]]:
    if cfg.run.histories:
        return [tuple(h) for h in cfg.run.histories]
    lo, hi = S.bounds
    rng = np.random.default_rng([S.seed, 1])
    return [tuple(float(v) for v in row) for row in rng.uniform(lo, hi, size=(count, S.dim))]


def _region_record(S: RegionSpec) -> dict:
    lo, hi = S.bounds
    return {
        "shape": S.shape,
        "center": list(S.center),
        "radius": S.radius,
        "lo": lo.tolist(),
        "hi": hi.tolist(),
        "samples": S.sample_count,
        "seed": S.seed,
        "r_excl": S.r_excl,
    }


def _cert_record(cert: GrowthCertificate) -> dict:
    rec = {
        "map": cert.label,
        "equilibrium": list(cert.equilibrium),
        "alpha": cert.alpha,
        "beta": cert.beta,
        "alpha_witness": list(cert.alpha_witness),
        "beta_witness": list(cert.beta_witness),
        "samples_used": cert.sample_count,
        "samples_skipped": cert.skipped,
    }
    if cert.alpha_tilde is not None:
        rec.update(alpha_tilde=cert.alpha_tilde, beta_tilde=cert.beta_tilde,
                   alpha_inflated=cert.alpha_inflated, beta_inflated=cert.beta_inflated)
    return rec


def _verdict_record(role: str, rec: VerdictRecord) -> dict:
    inv = rec.invariance
    return {
        "role": role,
        "verdict": rec.verdict.value,
        "certificate": _cert_record(rec.certificate),
        "invariance": {
            "passed": inv.passed,
            "checked": inv.checked,
            "witness": None if inv.witness is None else list(inv.witness),
            "image": None if inv.image is None else list(inv.image),
        },
    }


# -- closed loop construction -----------------------------------------------


@dataclass
class Synthesis:
    loop: ClosedLoop
    schedule: GainSchedule
    x_0p: EquilibriumPoint


def _synthesize(cfg: AnalysisConfig) -> Synthesis:
    c = cfg.control
    x0p = _nearest(cfg, uncontrolled_variant(cfg))
    s = cfg.solver
    try:
        if c.mode == COMBINED:
            sched = synthesize_combined(cfg.bundle, x0p.value, None, c.sigma, c.sigma_tilde, c.gamma, c.denom_tol,
                                        s.interval, s.grid, s.tol, c.max_rounds)
        else:
            sched = synthesize_nominal_only(cfg.bundle, x0p.value, None, c.sigma, c.gamma, c.a, c.b, c.denom_tol,
                                            s.interval, s.grid, s.tol, c.max_rounds)
    except (SynthesisError, ExprDomainError, OverflowError) as exc:
        raise AnalysisError("synthesize", str(exc)) from None
    return Synthesis(ClosedLoop(cfg.bundle, sched), sched, x0p)


def _schedule_record(sched: GainSchedule) -> dict:
    return {
        "mode": sched.mode,
        "x_0p": sched.x_sign_ref,
        "x_target": sched.x_target,
        "gamma": sched.gamma,
        "sigma": sched.sigma,
        "sigma_tilde": sched.sigma_tilde,
        "a": sched.a,
        "b": sched.b,
        "a_rule": sched.a_rule,
        "b_rule": sched.b_rule,
        "denom_tol": sched.denom_tol,
        "fixed_point_rounds": sched.rounds,
    }


# -- stages ------------------------------------------------------------------


def stage_equilibria(cfg: AnalysisConfig, report: dict) -> None:
    table = {}
    for v in _variants(cfg):
        table[v.value] = [{"value": p.value, "residual": p.residual} for p in _equilibria(cfg, v)]
    oc = order_compatibility(cfg.bundle)
    report["equilibria"] = table
    report["order_compatibility"] = {
        "common_eq_uncontrolled_possible": oc.common_eq_uncontrolled_possible,
        "common_eq_all_possible": oc.common_eq_all_possible,
        "orders": oc.orders,
    }


def stage_estimate(cfg: AnalysisConfig, report: dict) -> None:
    records = []
    for name in cfg.estimate_cases():
        case = ESTIMATE_CASES[name]
        target = case.base + case.perturbing
        truths = _equilibria(cfg, target)
        for base in _equilibria(cfg, case.base):
            try:
                est = linear_estimate(cfg.bundle, case, base, cfg.solver.rank_tol)
            except (ExprDomainError, OverflowError) as exc:
                raise AnalysisError("linear_estimate", str(exc)) from None
            rec = {
                "case": name,
                "base": est.base.tolist(),
                "matrix": est.matrix.tolist(),
                "residual": est.residual.tolist(),
                "classification": est.classification.value,
                "rank": est.rank,
                "rank_augmented": est.rank_augmented,
                "estimate": None if est.estimate is None else est.estimate.tolist(),
                "banach_bound": est.banach_bound,
                "located": None,
                "error": None,
            }
            if est.estimate is not None and truths:
                x_hat = float(est.estimate[0])
                true = min(truths, key=lambda p: (abs(p.value - x_hat), p.value))
                rec["located"] = true.value
                rec["error"] = float(np.max(np.abs(est.estimate - true.value)))
            records.append(rec)
    report["estimates"] = records
    report["estimates_skipped"] = cfg.skipped_cases()


def stage_certify(cfg: AnalysisConfig, report: dict, synth: Synthesis | None) -> list[StabilityVerdict]:
    u_var = uncontrolled_variant(cfg)
    dim = state_dim(cfg)
    try:
        if synth is not None:
            x_u = synth.x_0p
            S = _region(cfg, x_u.value)
            pair = classify(
                (associate_map(cfg.bundle, u_var, dim), x_u.value),
                (synth.loop.as_vector_map(dim), synth.schedule.x_target),
                S,
            )
            roles = [(u_var.value, pair[0]), ("closed_loop", pair[1])]
        else:
            c_var = controlled_variant(cfg)
            x_u = _nearest(cfg, u_var)
            S = _region(cfg, x_u.value)
            if c_var is None:
                roles = [(u_var.value, assess(associate_map(cfg.bundle, u_var, dim), x_u.value, S))]
            else:
                x_c = _nearest(cfg, c_var, x_u.value)
                pair = classify(
                    (associate_map(cfg.bundle, u_var, dim), x_u.value),
                    (associate_map(cfg.bundle, c_var, dim), x_c.value),
                    S,
                )
                roles = [(u_var.value, pair[0]), (c_var.value, pair[1])]
    except (ExprDomainError, OverflowError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise AnalysisError("certify", str(exc)) from None
    report["region"] = _region_record(S)
    report["verdicts"] = [_verdict_record(role, rec) for role, rec in roles]
    return [rec.verdict for _, rec in roles]


def stage_synthesize(cfg: AnalysisConfig, report: dict, synth: Synthesis) -> int:
    loop, sched = synth.loop, synth.schedule
    dim = loop.history_length
    S = _region(cfg, synth.x_0p.value)
    samples = sample_region(S)
    out = {"schedule": _schedule_record(sched)}
    try:
        u_cert = growth_certificate(associate_map(cfg.bundle, uncontrolled_variant(cfg), dim), synth.x_0p.value, S,
                                    samples=samples)
        c_cert = growth_certificate(loop.as_vector_map(dim), sched.x_target, S, samples=samples)
        sb = verify_shift_bound(sched.x_target - synth.x_0p.value, u_cert.alpha, c_cert.beta, samples,
                                (synth.x_0p.value,) * dim, S.r_excl)
        out["shift_bound"] = {
            "delta": sched.x_target - synth.x_0p.value,
            "ok": sb.ok,
            "margin": sb.margin,
            "threshold": sb.threshold,
            "min_distance": sb.min_distance,
            "ok_without_exclusion": sb.strict_ok,
            "note": sb.note,
        }
        if sched.mode != COMBINED:
            n_cert = growth_certificate(loop.nominal_map(dim), sched.x_target, S, samples=samples)
            sm = verify_smallness(cfg.bundle, sched.x_target, synth.x_0p.value, S, sched.a, sched.b,
                                  n_cert.beta, u_cert.alpha, samples)
            out["smallness"] = {
                "alpha": u_cert.alpha,
                "beta": n_cert.beta,
                "alpha_tilde": sm.alpha_tilde,
                "beta_tilde": sm.beta_tilde,
                "beta_tilde_limit": sm.beta_limit,
                "admissible": sm.admissible,
            }
        sign = mag = chain = chain_checked = steps = 0
        for h in _starts(cfg, S, GAIN_CHECK_STARTS):
            run = loop.simulate(h, cfg.run.steps)
            chk = verify_gain_trace(loop, run, S)
            steps += chk.steps
            sign += chk.sign_violations
            mag += chk.magnitude_violations
            chain += chk.chain_violations
            chain_checked += chk.chain_checked
    except (ExprDomainError, OverflowError) as exc:
        raise AnalysisError("synthesize", str(exc)) from None
    out["gain_check"] = {
        "steps": steps,
        "sign_violations": sign,
        "magnitude_violations": mag,
        "violations": sign + mag,
        "chain_checked": chain_checked,
        "chain_violations": chain,
    }
    report["synthesis"] = out
    return sign + mag


def stage_simulate(cfg: AnalysisConfig, report: dict, files: dict, synth: Synthesis | None) -> int:
    dim = state_dim(cfg)
    u_var = uncontrolled_variant(cfg)
    x_u = None
    eqs = _equilibria(cfg, u_var)
    if eqs:
        x_u = min(eqs, key=lambda p: (abs(p.value - _anchor(cfg)), p.value)).value
    S = _region(cfg, 0.0 if x_u is None else x_u)
    starts = _starts(cfg, S, DEFAULT_STARTS)
    r = cfg.run
    maps = [(u_var.value, associate_map(cfg.bundle, u_var, dim))]
    c_var = controlled_variant(cfg)
    if c_var is not None:
        maps.append((c_var.value, associate_map(cfg.bundle, c_var, dim)))
    records = []
    violations = 0
    for k, h in enumerate(starts):
        for label, vmap in maps:
            traj = iterate(vmap, h, r.steps)
            name = f"trajectories/{label}_{k:03d}.csv"
            files[name] = trajectory_csv(traj.scalars)
            records.append(_trajectory_record(cfg, label, name, h, traj, vmap))
        if synth is not None:
            loop = synth.loop
            try:
                run = loop.simulate(h, r.steps)
            except ValueError as exc:
                raise AnalysisError("simulate", str(exc)) from None
            chk = verify_gain_trace(loop, run)
            violations += chk.violations
            name = f"trajectories/closed_loop_{k:03d}.csv"
            files[name] = trajectory_csv(run.trajectory.scalars, run.gains, chk.sign_ok)
            rec = _trajectory_record(cfg, "closed_loop", name, h, run.trajectory, loop.as_vector_map())
            target = synth.schedule.x_target
            rec["gain_violations"] = chk.violations
            rec["distance_to_target"] = abs(float(run.trajectory.scalars[-1]) - target)
            if max(abs(v - target) for v in h) > 0.0:
                tr = contraction_trace(loop.as_vector_map(), target, h, r.steps)
                rec["contraction_rate"] = tr.rate
            records.append(rec)
    report["trajectories"] = records
    return violations


def _trajectory_record(cfg, label, name, history, traj, vmap) -> dict:
    r = cfg.run
    rec = {
        "map": label,
        "file": name,
        "history": list(history),
        "status": traj.status,
        "steps": len(traj) - 1,
        "final": float(traj.scalars[-1]),
        "oscillation": None,
    }
    if not traj.diverged and len(traj) >= r.window + r.max_period:
        try:
            pat = detect_oscillation(traj, r.max_period, r.window, r.osc_tol, vmap)
        except (ExprDomainError, OverflowError):
            pat = None
        if pat is not None:
            rec["oscillation"] = {"period": pat.period, "values": list(pat.values),
                                  "max_deviation": pat.max_deviation}
    return rec


# -- orchestration -----------------------------------------------------------


def run_analysis(cfg: AnalysisConfig, subcommand: str) -> Outcome:
    """Execute the pipeline for ``subcommand`` on a validated configuration."""
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    report: dict = {"schema": SCHEMA, "subcommand": subcommand, "config": echo(cfg), "version": __version__}
    files: dict[str, str] = {}
    full = subcommand == "full"
    verdicts: list[StabilityVerdict] = []
    violations = 0

    synth = None
    if cfg.control is not None and subcommand in ("certify", "synthesize", "simulate", "full"):
        synth = _synthesize(cfg)
    if subcommand == "synthesize" and cfg.control is None:
        raise ConfigError("control", "the synthesize subcommand needs a [control] section")

    if full or subcommand == "equilibria":
        stage_equilibria(cfg, report)
    if full or subcommand == "estimate":
        stage_estimate(cfg, report)
    if full or subcommand == "certify":
        verdicts = stage_certify(cfg, report, synth)
    if synth is not None and (full or subcommand == "synthesize"):
        violations += stage_synthesize(cfg, report, synth)
    if full or subcommand == "simulate":
        violations += stage_simulate(cfg, report, files, synth)

    code = 0
    if any(v is StabilityVerdict.INCONCLUSIVE for v in verdicts) or violations:
        code = 2
    report["exit_code"] = code
    return Outcome(report, files, code)


def text_summary(report: dict) -> str:
    lines = [f"stabkit {report['subcommand']} report ({report['schema']})", ""]
    if "equilibria" in report:
        lines.append("Equilibria")
        for variant, rows in report["equilibria"].items():
            vals = ", ".join(f"{r['value']:.12g}" for r in rows) or "none found"
            lines.append(f"  {variant:22s} {vals}")
        lines.append("")
    if "estimates" in report:
        lines.append("Linear estimates")
        for e in report["estimates"]:
            est = "-" if e["estimate"] is None else f"{e['estimate'][0]:.12g}"
            err = "-" if e["error"] is None else f"{e['error']:.3e}"
            lines.append(f"  {e['case']:32s} base {e['base'][0]:.12g} -> {est} [{e['classification']}] error {err}")
        lines.append("")
    if "verdicts" in report:
        lines.append("Verdicts")
        for v in report["verdicts"]:
            c = v["certificate"]
            lines.append(
                f"  {v['role']:22s} {v['verdict']:20s} alpha {c['alpha']:.6g} beta {c['beta']:.6g} "
                f"invariant {v['invariance']['passed']}"
            )
        lines.append("")
    if "synthesis" in report:
        s = report["synthesis"]
        sc = s["schedule"]
        lines.append("Synthesis")
        lines.append(f"  mode {sc['mode']} gamma {sc['gamma']} x_0p {sc['x_0p']:.12g} x_target {sc['x_target']:.12g}")
        g = s["gain_check"]
        lines.append(f"  gain constraint violations {g['violations']} over {g['steps']} steps")
        lines.append(f"  shift bound ok {s['shift_bound']['ok']}")
        if "smallness" in s:
            lines.append(f"  smallness admissible {s['smallness']['admissible']}")
        lines.append("")
    if "trajectories" in report:
        lines.append("Trajectories")
        for t in report["trajectories"]:
            osc = "" if t["oscillation"] is None else f" period {t['oscillation']['period']}"
            lines.append(f"  {t['file']:40s} {t['status']:18s} final {t['final']:.6g}{osc}")
        lines.append("")
    lines.append(f"exit code {report['exit_code']}")
    return "\n".join(lines) + "\n"


def write_outputs(outcome: Outcome, out_dir: Path, formats: Sequence[str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if "json" in formats:
        (out_dir / "report.json").write_bytes(dumps(outcome.report).encode("utf-8"))
    if "text" in formats:
        (out_dir / "report.txt").write_bytes(text_summary(outcome.report).encode("utf-8"))
    if "csv" in formats:
        for name, text in outcome.files.items():
            path = out_dir / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(text.encode("utf-8"))


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stabkit", description="Equilibria, stability certificates and "
                                "stabilizing feedback for scalar difference equations.")
    p.add_argument("--version", action="version", version=f"stabkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} analysis")
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--out", help="output directory (overrides [output].dir)")
        sp.add_argument("--seed", type=_u64, help="override the region sampling seed")
    dp = sub.add_parser("diff", help="compare two report.json files")
    dp.add_argument("a")
    dp.add_argument("b")
    dp.add_argument("--tol", type=float, default=0.0, help="relative tolerance on numbers")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "diff":
        try:
            found = diff_reports(args.a, args.b, args.tol)
        except (OSError, ValueError, ReportSchemaError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        for d in found:
            print(d)
        return 0 if not found else 2
    try:
        cfg = load_config(args.config, args.seed)
        outcome = run_analysis(cfg, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (AnalysisError, OrderHypothesisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(args.out) if args.out else Path(cfg.output.dir)
    write_outputs(outcome, out_dir, cfg.output.formats)
    for v in outcome.report.get("verdicts", []):
        print(f"{v['role']}: {v['verdict']}")
    print(f"report written to {out_dir}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
