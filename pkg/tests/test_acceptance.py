"""End-to-end acceptance criteria.

Each test recomputes its verdict from the raw run outputs with the
tolerances pinned below, records a one-line result for the terminal
summary, and asserts. Criteria that the model does not attain fail here
rather than being relaxed.
"""

import os
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE

from stacklab.config import build_spec, builtin_config
from stacklab.core import RngStream
from stacklab.demos import run_demo, write_artifacts
from stacklab.diagnostics import (DriftIntervals, check_drift_conclusion, check_monotone,
                                  check_trajectory_containment, ks_statistic, shock_recovery,
                                  trajectory_variance)
from stacklab.engine import EngineSpec, EstimatorSpec, UpdatePolicy, run_experiment
from stacklab.estimators import TrainingSet, fit_forest, fit_logistic
from stacklab.ground_truth import eval_truth
from stacklab.population import config_from_dict, run_healthcare, write_healthcare_outputs

# pinned tolerances
AC1_TAU, AC1_BAND, AC1_BURN_IN, AC1_SAMPLES, AC1_EPOCHS, AC1_SECONDS = 0.01, 0.01, 200, 50, 1000, 30
AC2_TAU, AC2_REPLICATES, AC2_SECONDS = 0.02, 2000, 120
AC3_THRESHOLD, AC3_M, AC3_EPOCHS, AC3_SEEDS = 0.1, 1000, (500, 1000), range(5)
AC4_DELTA, AC4_GAMMA, AC4_EPS, AC4_FRACTION, AC4_REFITS = (0.007, 0.03), (0.5, 2.0), 0.05, 0.95, 200
AC5_TAU, AC5_ALPHA = 0.02, 1 / 200
AC6_EPS0, AC6_EPOCHS, AC6_SHOCKS, AC6_SAMPLES = 0.05, 200, 3, 50
AC7_FULL_SECONDS, AC7_SMOKE_SECONDS = 600, 30
AC10_COEF_TOL, AC10_N, AC10_SIGMAS = 0.05, 100_000, 3

pytestmark = pytest.mark.slow

DEMO_NAMES = ("thm1", "thm2", "thm3-converge", "thm3-diverge", "thm4", "thm5", "cor1")


def _record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    assert ok, f"{key}: {detail}"


@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def demos(outdir):
    """Seed-0 run of every demo with its wall time and written artifacts."""
    runs = {}
    for name in DEMO_NAMES:
        t0 = time.perf_counter()
        outcome = run_demo(name, seed=0, charts_on=False)
        elapsed = time.perf_counter() - t0
        write_artifacts(outcome, str(outdir / "first" / name), charts_on=True)
        runs[name] = (outcome, elapsed)
    return runs


def test_ac1_deterministic_limit_bounds(demos):
    outcome, secs = demos["thm1"]
    rec, bounds = outcome.result.record, outcome.reports["limit_bounds"]
    shape_ok = rec.rho_true.shape == (AC1_EPOCHS, AC1_SAMPLES)
    cont = check_trajectory_containment(rec, bounds, AC1_BURN_IN, AC1_TAU)
    mono = check_monotone(rec, 0.2, AC1_BAND)
    ok = shape_ok and cont.fraction == 1.0 and mono.passed and secs < AC1_SECONDS
    _record("AC1", ok, f"bounds [{bounds.lower:.4f}, {bounds.upper:.4f}], inside "
            f"{cont.fraction:.4f}, monotone violations {len(mono.violations)}, {secs:.1f}s")


def test_ac2_stochastic_limit_bounds_and_variance(demos):
    outcome, secs = demos["thm2"]
    ref, _ = demos["thm1"]
    rec, bounds = outcome.result.record, outcome.reports["limit_bounds"]
    cont = check_trajectory_containment(rec, bounds, AC1_BURN_IN, AC2_TAU)
    v2 = trajectory_variance(rec, AC1_BURN_IN)
    v1 = trajectory_variance(ref.result.record, AC1_BURN_IN)
    reps_ok = outcome.result.spec.truth_replicates == AC2_REPLICATES
    ok = cont.fraction == 1.0 and v2 > v1 and secs < AC2_SECONDS and reps_ok
    _record("AC2", ok, f"inside {cont.fraction:.4f}, variance {v2:.3g} vs deterministic "
            f"{v1:.3g}, {secs:.1f}s")


def _final_ks(name, seed):
    cfg = builtin_config(name)
    spec, _ = build_spec(cfg, seed=seed)
    assert spec.ks_m == AC3_M
    res = run_experiment(spec)
    a, b = (res.ks_samples[(e, 0)][:, 0] for e in AC3_EPOCHS)
    return ks_statistic(a, b)


def test_ac3_distributional_convergence_separates_variants():
    conv = [_final_ks("thm3-converge", s) for s in AC3_SEEDS]
    div = [_final_ks("thm3-diverge", s) for s in AC3_SEEDS]
    again = _final_ks("thm3-converge", 0)
    ok = (all(k < AC3_THRESHOLD for k in conv) and all(k > AC3_THRESHOLD for k in div)
          and again == conv[0])
    _record("AC3", ok, "linear KS " + " ".join(f"{k:.3f}" for k in conv)
            + " | cube-root KS " + " ".join(f"{k:.3f}" for k in div))


def test_ac4_attraction_interval(demos):
    outcome, _ = demos["thm4"]
    inp, att = outcome.reports["attraction_inputs"], outcome.reports["attraction"]
    delta, gamma = inp["delta"], inp["gamma"]
    cfg = builtin_config("thm4")["diagnostics"]["attraction"]
    assert cfg["replicates"] == AC4_REFITS and cfg["min_outside"] == AC4_EPS
    ok = (AC4_DELTA[0] <= delta <= AC4_DELTA[1] and AC4_GAMMA[0] <= gamma <= AC4_GAMMA[1]
          and att["n_outside"] > 0 and att["fraction_toward"] >= AC4_FRACTION)
    _record("AC4", ok, f"delta {delta:.4f}, gamma {gamma:.3f}, interval "
            f"[{att['I1']:.3f}, {att['I2']:.3f}], toward {att['n_toward']}/{att['n_outside']}")


def test_ac5_bounded_drift(demos):
    outcome, _ = demos["thm5"]
    assert outcome.result.spec.truth.drift.alpha == AC5_ALPHA
    rep = outcome.reports["drift"]
    iv = DriftIntervals(tuple(rep["I_rho"]), tuple(rep["I_lim"]), AC5_ALPHA, rep["gamma"], 0.2)
    diag = builtin_config("thm5")["diagnostics"]
    again = check_drift_conclusion(outcome.result.record, iv, diag["burn_in"], AC5_TAU,
                                   diag["drift"]["eps"])
    ok = again.fraction == 1.0
    _record("AC5", ok, f"gamma {iv.gamma:.3f}, I_rho [{iv.I_rho[0]:.3f}, {iv.I_rho[1]:.3f}], "
            f"I_lim [{iv.I_lim[0]:.3f}, {iv.I_lim[1]:.3f}], satisfied {again.fraction:.2f} "
            f"({rep['per_sample'].count('contained')} contained)")


def test_ac6_shock_recovery(demos):
    outcome, _ = demos["cor1"]
    rec = outcome.result.record
    drift = outcome.result.spec.truth.drift
    # without drift inside a segment the rho interval collapses to the target
    intervals = [DriftIntervals((0.2, 0.2), tuple(lim), 0.0, 1.0, 0.2)
                 for lim in outcome.reports["recovery"]["I_lim"]]
    rep = shock_recovery(rec, drift.change_points, intervals, AC6_EPS0)
    shape_ok = rec.rho_true.shape == (AC6_EPOCHS, AC6_SAMPLES)
    ok = shape_ok and len(drift.change_points) == AC6_SHOCKS and rep.recovered()
    _record("AC6", ok, f"change points {list(drift.change_points)}, epochs to recover {rep.n}")


def _healthcare(name, out):
    cfg = config_from_dict(builtin_config(name))
    t0 = time.perf_counter()
    res = run_healthcare(cfg)
    secs = time.perf_counter() - t0
    write_healthcare_outputs(res, str(out), charts_on=False)
    return res, secs


def _health_summary(res):
    f = res.fairness
    v, m = f.variance_reduced(), f.mean_attracted()
    return (sum(v.values()), sum(m.values()), len(f.pre))


def test_ac7_healthcare_cohorts(outdir):
    smoke, s_secs = _healthcare("healthcare-smoke", outdir / "hc-smoke")
    full, f_secs = _healthcare("healthcare", outdir / "hc-full")
    fc, sc = full.config, smoke.config
    sizes_ok = (fc.n, fc.epochs, fc.n_trees) == (10_000, 20, 500) and (sc.n, sc.n_trees) == (500, 50)
    ok = (sizes_ok and full.fairness.passed() and len(full.fairness.pre) == 9
          and smoke.fairness.passed() and len(smoke.fairness.pre) == 9
          and f_secs < AC7_FULL_SECONDS and s_secs < AC7_SMOKE_SECONDS)
    fv, fm, fn = _health_summary(full)
    sv, sm, sn = _health_summary(smoke)
    _record("AC7", ok, f"full: variance down {fv}/{fn}, mean closer {fm}/{fn}, {f_secs:.0f}s; "
            f"smoke: {sv}/{sn}, {sm}/{sn}, {s_secs:.1f}s")


def test_ac8_naive_bias_versus_stacked_movement():
    spec, _ = build_spec(builtin_config("thm1"))
    truth, g = spec.truth, spec.intervention
    gen = np.random.default_rng(0)
    X = gen.uniform(-3, 3, size=(200, 3))
    X = X[eval_truth(truth, 0, X) > 0.2]
    runs = {}
    for kind in ("naive", "stacked"):
        runs[kind] = run_experiment(EngineSpec(truth, g, EstimatorSpec("oracle"),
                                               UpdatePolicy(kind), 1, X))
    f = eval_truth(truth, 0, X)
    naive_low = runs["naive"].rho_hist[1] < f
    r0, r1 = runs["stacked"].record.rho_true
    toward = (r1 - r0) * (r0 - 0.2) < 0
    ok = X.shape[0] > 0 and bool(naive_low.all()) and bool(toward.all())
    _record("AC8", ok, f"{X.shape[0]} probes: naive below f(x) {int(naive_low.sum())}, "
            f"stacked moved toward target {int(toward.sum())}")


def _tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            if f.endswith((".csv", ".json", ".jsonl")):
                p = os.path.join(dirpath, f)
                with open(p, "rb") as fh:
                    out[os.path.relpath(p, root)] = fh.read()
    return out


def test_ac9_determinism(demos, outdir):
    for name in DEMO_NAMES:
        write_artifacts(run_demo(name, seed=0, charts_on=False), str(outdir / "second" / name),
                        charts_on=True)
    for tree in ("first", "second"):
        _healthcare("healthcare-smoke", outdir / tree / "hc-smoke")
    a = _tree_bytes(outdir / "first")
    b = _tree_bytes(outdir / "second")
    differ = [k for k in sorted(a) if a[k] != b.get(k)]
    ok = set(a) == set(b) and len(a) > 0 and not differ
    _record("AC9", ok, f"{len(a)} CSV/JSON files compared, {len(differ)} differ")


def test_ac10_estimator_oracles():
    gen = np.random.default_rng(2024)
    beta, b0 = np.array([0.8, -0.5, 0.3]), 0.2
    X = gen.normal(size=(AC10_N, 3))
    y = (gen.random(AC10_N) < 1 / (1 + np.exp(-(X @ beta + b0)))).astype(float)
    fit = fit_logistic(TrainingSet(X, y))
    coef_err = float(np.max(np.abs(np.append(fit.coef, fit.intercept) - np.append(beta, b0))))

    Xc = gen.normal(size=(300, 3))
    forest = fit_forest(TrainingSet(Xc, np.full(300, 0.37)), n_trees=50, rng=RngStream(1))
    const_ok = bool(np.all(forest.predict(gen.normal(size=(1000, 3))) == 0.37))

    spec, _ = build_spec(builtin_config("thm1") | {"epochs": 30})
    mc = run_experiment(spec)
    ex = run_experiment(EngineSpec(spec.truth, spec.intervention, EstimatorSpec("oracle"),
                                   spec.policy, spec.epochs, spec.tracked, seed=spec.seed))
    # the chains are deterministic, so the Monte-Carlo spread (and band) is zero
    sigma = 0.0
    mc_gap = float(np.max(np.abs(mc.record.rho_est - ex.record.rho_est)))
    ok = coef_err < AC10_COEF_TOL and const_ok and mc_gap <= AC10_SIGMAS * sigma
    _record("AC10", ok, f"logistic max error {coef_err:.4f}, constant forest exact {const_ok}, "
            f"mc-empirical vs oracle max gap {mc_gap:.2g}")
