"""Preconfigured experiments with built-in pass/fail checks.

Each demo runs one shipped config through the engine, evaluates the
diagnostics its config block asks for, and optionally writes the
trajectory CSV, a versioned diagnostics JSON and SVG charts.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import charts
from . import diagnostics as D
from .config import build_spec, builtin_config
from .core import RngStream
from .engine import ExperimentResult, run_experiment, write_outputs
from .interventions import intervention_at, verify_well_intentioned

log = logging.getLogger(__name__)

DEMOS = ("thm1", "thm2", "thm3-converge", "thm3-diverge", "thm4", "thm5", "cor1")
REPORT_FORMAT = "stacklab.diagnostics/1"
# order-effect constant the attraction argument assumes
LAMBDA_FLOOR = 0.25


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    required: bool = True


@dataclass
class DemoOutcome:
    name: str
    seed: int
    checks: list
    reports: dict
    result: ExperimentResult | None = None
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    def to_json(self) -> dict:
        return {"format": REPORT_FORMAT, "name": self.name, "seed": self.seed,
                "passed": self.passed,
                "checks": [D.to_jsonable(c) for c in self.checks],
                "reports": D.to_jsonable(self.reports)}


def _rho_eq(spec) -> float:
    return float(intervention_at(spec.intervention, 0).rho_eq)


def _probes(diag) -> D.ProbeSpec:
    return D.ProbeSpec(**diag.get("probes", {}))


def _containment_checks(spec, result, diag, checks, reports):
    g = intervention_at(spec.intervention, 0)
    burn_in, tau = int(diag["burn_in"]), float(diag.get("tau", 0.01))
    bounds = D.compute_limit_bounds(spec.truth, g, probes=_probes(diag),
                                    rng=RngStream(spec.seed).derive("bounds"))
    cont = D.check_trajectory_containment(result.record, bounds, burn_in, tau)
    reports["limit_bounds"] = bounds
    reports["containment"] = {"fraction": cont.fraction, "min_per_sample": float(cont.per_sample.min())}
    checks.append(Check("containment", cont.passed,
                        {"lower": bounds.lower, "upper": bounds.upper, "tau": tau,
                         "fraction": cont.fraction}))
    mono = D.check_monotone(result.record, _rho_eq(spec), float(diag.get("monotone_band", 0.01)))
    reports["monotone"] = {"checked": mono.checked, "violations": len(mono.violations)}
    # movement toward rho_eq is guaranteed step by step only for deterministic g
    checks.append(Check("monotone", mono.passed,
                        {"checked": mono.checked, "violations": len(mono.violations)},
                        required=not g.stochastic))
    var = D.trajectory_variance(result.record, burn_in)
    reports["variance"] = var
    return var


def _variance_check(cfg_diag, own_var, seed, threads, checks, reports):
    ref = cfg_diag["compare_variance"]
    rspec, rdiag = build_spec(builtin_config(ref["reference"]), seed=seed, threads=threads)
    rres = run_experiment(rspec)
    ref_var = D.trajectory_variance(rres.record, int(rdiag.get("burn_in", cfg_diag["burn_in"])))
    greater = ref.get("relation", "greater") == "greater"
    ok = own_var > ref_var if greater else own_var < ref_var
    reports["variance_reference"] = {"reference": ref["reference"], "variance": ref_var}
    checks.append(Check("variance-vs-" + ref["reference"], bool(ok),
                        {"variance": own_var, "reference_variance": ref_var,
                         "relation": ref.get("relation", "greater")}))


def _ks_checks(result, diag, checks, reports):
    ks = diag["ks"]
    out = {}
    for s in ks.get("samples", [0]):
        trace = D.DistributionTrace.from_result(result, s)
        rep = D.ks_convergence(trace, float(ks.get("threshold", 0.1)))
        out[s] = rep
        if "expect_converging" in ks:
            final = rep.ks[rep.final_pair]
            want = bool(ks["expect_converging"])
            ok = final < rep.threshold if want else final > rep.threshold
            checks.append(Check(f"ks-sample-{s}", bool(ok),
                                {"final_pair": list(rep.final_pair), "ks": final,
                                 "threshold": rep.threshold, "expect_converging": want,
                                 "converging_flag": rep.converging}))
    reports["ks"] = {s: {"converging": r.converging,
                         "ks": {f"{a}-{b}": v for (a, b), v in r.ks.items()}}
                     for s, r in out.items()}


def _attraction_checks(spec, result, diag, checks, reports):
    a = diag["attraction"]
    rho_eq = _rho_eq(spec)
    probes = _probes(diag)
    box = a.get("gamma_box", [probes.low, probes.high])
    gp = D.ProbeSpec(probes.n_x, probes.n_rho, box[0], box[1], probes.replicates)
    X = gp.points(spec.truth.p, RngStream(spec.seed).derive("gamma"))
    lo, hi = a.get("gamma_rho", [0.0, 1.0])
    wi = verify_well_intentioned(intervention_at(spec.intervention, 0), spec.truth,
                                 np.linspace(lo, hi, gp.n_rho), X, gp.replicates,
                                 RngStream(spec.seed).derive("gamma-mc"), tol=1e-9)
    P = D.refit_probes(result, a["probe_epochs"], int(a.get("replicates", 200)),
                       int(a.get("ensemble", 500)))
    delta = D.measure_delta(P)
    lam_global = D.measure_lambda(P, rho_eq)
    lam = D.measure_lambda_outside(P, rho_eq, delta, wi.gamma)
    reports["attraction_inputs"] = {"gamma": wi.gamma, "gamma_violations": len(wi.violations),
                                    "delta": delta, "lambda_global": lam_global,
                                    "lambda_outside": lam}
    dr, gr = a.get("delta_range"), a.get("gamma_range")
    if dr:
        checks.append(Check("delta-range", dr[0] <= delta <= dr[1], {"delta": delta, "range": dr}))
    if gr:
        checks.append(Check("gamma-range", gr[0] <= wi.gamma <= gr[1],
                            {"gamma": wi.gamma, "range": gr}))
    checks.append(Check("lambda-global", lam_global >= LAMBDA_FLOOR,
                        {"lambda": lam_global, "floor": LAMBDA_FLOOR}, required=False))
    if lam <= 0:
        checks.append(Check("attraction", False, {"reason": "no self-consistent lambda"}))
        return
    iv = D.AttractionInterval.build(rho_eq, delta, wi.gamma, lam)
    rep = D.attraction_check(P, iv, float(a.get("min_outside", 0.05)))
    frac = float(a.get("min_fraction", 0.95))
    reports["attraction"] = {"I1": iv.I1, "I2": iv.I2, "n_outside": rep.n_outside,
                             "n_toward": rep.n_toward, "fraction_toward": rep.fraction_toward,
                             "n_magnitude": rep.n_magnitude}
    checks.append(Check("attraction", rep.passed(frac),
                        {"I1": iv.I1, "I2": iv.I2, "n_outside": rep.n_outside,
                         "fraction_toward": rep.fraction_toward, "min_fraction": frac}))


def _drift_checks(spec, result, diag, checks, reports):
    d = diag.get("drift", {})
    g = intervention_at(spec.intervention, 0)
    rho_eq = _rho_eq(spec)
    probes = _probes(diag)
    if "gamma" in d:
        gamma = float(d["gamma"])
    else:
        lo, hi = d.get("gamma_rho", [0.0, 1.0])
        X = probes.points(spec.truth.p, RngStream(spec.seed).derive("gamma"))
        gamma = verify_well_intentioned(g, spec.truth, np.linspace(lo, hi, probes.n_rho), X,
                                        probes.replicates, RngStream(spec.seed).derive("gamma-mc"),
                                        tol=1e-9).gamma
    iv = D.drift_intervals(spec.truth.drift.alpha, gamma, rho_eq, spec.truth, g, probes=probes,
                           rng=RngStream(spec.seed).derive("drift"))
    rep = D.check_drift_conclusion(result.record, iv, int(diag.get("burn_in", 200)),
                                   float(diag.get("tau", 0.02)), float(d.get("eps", 0.02)))
    reports["drift"] = {"gamma": gamma, "I_rho": iv.I_rho, "I_lim": iv.I_lim,
                        "flags": iv.flags, "per_sample": rep.per_sample}
    checks.append(Check("drift-conclusion", rep.passed,
                        {"fraction": rep.fraction, "I_rho": list(iv.I_rho),
                         "I_lim": list(iv.I_lim), "gamma": gamma}))


def _recovery_checks(spec, result, diag, checks, reports):
    cps = spec.truth.drift.change_points
    probes = _probes(diag)
    starts = [0] + list(cps)
    ivs = []
    for i, e in enumerate(starts):
        g = intervention_at(spec.intervention, e)
        ivs.append(D.drift_intervals(0.0, 1.0, _rho_eq(spec), spec.truth, g, probes=probes,
                                     rng=RngStream(spec.seed).derive("segment", i), e=e))
    eps0 = float(diag.get("recovery", {}).get("epsilon0", 0.05))
    rep = D.shock_recovery(result.record, cps, ivs, eps0)
    reports["recovery"] = {"segments": rep.segments, "n": rep.n, "lengths": rep.lengths,
                           "I_lim": [iv.I_lim for iv in ivs]}
    checks.append(Check("shock-recovery", rep.recovered(),
                        {"n": rep.n, "lengths": rep.lengths, "epsilon0": eps0}))


def run_config(cfg: dict, seed: int | None = None, threads: int = 1, out: str | None = None,
               charts_on: bool = True, progress=None, name: str | None = None) -> DemoOutcome:
    """Run an experiment config and every diagnostic its block requests."""
    spec, diag = build_spec(cfg, seed=seed, threads=threads)
    result = run_experiment(spec, progress)
    checks, reports = [], {}
    drift = spec.truth.drift.kind
    if "burn_in" in diag and drift == "none":
        var = _containment_checks(spec, result, diag, checks, reports)
        if "compare_variance" in diag:
            _variance_check(diag, var, spec.seed, threads, checks, reports)
    if "ks" in diag:
        _ks_checks(result, diag, checks, reports)
    if "attraction" in diag:
        _attraction_checks(spec, result, diag, checks, reports)
    if drift == "bounded":
        _drift_checks(spec, result, diag, checks, reports)
    if drift == "shocks":
        _recovery_checks(spec, result, diag, checks, reports)
    outcome = DemoOutcome(name or spec.name, spec.seed, checks, reports, result)
    if out is not None:
        outcome.artifacts = write_artifacts(outcome, out, charts_on)
    return outcome


def run_demo(name: str, seed: int | None = None, threads: int = 1, out: str | None = None,
             charts_on: bool = True, progress=None) -> DemoOutcome:
    if name not in DEMOS:
        raise KeyError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
    return run_config(builtin_config(name), seed, threads, out, charts_on, progress, name)


def write_artifacts(outcome: DemoOutcome, out: str, charts_on: bool = True) -> dict:
    """Trajectory and distribution CSVs, score stack, diagnostics JSON and charts."""
    os.makedirs(out, exist_ok=True)
    paths = write_outputs(outcome.result, out)
    paths["diagnostics"] = os.path.join(out, "diagnostics.json")
    with open(paths["diagnostics"], "w") as fh:
        json.dump(outcome.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if charts_on:
        ref = [_rho_eq(outcome.result.spec)]
        b = outcome.reports.get("limit_bounds")
        if b is not None:
            ref += [b.lower, b.upper]
        paths["chart_trajectories"] = charts.trajectory_lines(
            paths["trajectory"], os.path.join(out, "trajectories.svg"), reference=ref,
            title=f"{outcome.name}: true risk")
        if "distribution" in paths:
            paths["chart_density"] = charts.density_stack(
                paths["distribution"], os.path.join(out, "density.svg"),
                title=f"{outcome.name}: first coordinate of X_e(1)")
    return paths
