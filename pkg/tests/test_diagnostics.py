import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stacklab.config import build_spec, builtin_config
from stacklab.core import RngStream
from stacklab.diagnostics import (AttractionInterval, DistributionTrace, DriftIntervals, LimitBounds,
                                  ProbeSpec, RefitProbes, attraction_check,
                                  check_drift_conclusion, check_monotone,
                                  check_trajectory_containment, compute_limit_bounds,
                                  drift_intervals, ks_convergence, ks_statistic,
                                  measure_lambda_outside, shock_recovery, trajectory_variance)
from stacklab.engine import TrajectoryRecord
from stacklab.ground_truth import GroundTruthModel
from stacklab.interventions import DET_CBRT, IDENTITY, UNIF_CBRT, InterventionModel

TRUTH = GroundTruthModel([0.5, 0.3, 0.9])
SMALL = ProbeSpec(n_x=2000, n_rho=40, replicates=200)


def _record(R):
    R = np.asarray(R, dtype=float)
    E, m = R.shape
    return TrajectoryRecord(R, R.copy(), np.zeros((E, m), np.int8), np.zeros((E, m, 1)))


def test_ks_identical_samples_is_zero():
    a = np.random.default_rng(0).normal(size=500)
    assert ks_statistic(a, a) == 0.0
    assert ks_statistic(a, a[::-1]) == 0.0


def test_ks_disjoint_samples_is_one():
    assert ks_statistic([0.0, 1.0], [5.0, 6.0]) == 1.0


def test_ks_matches_scipy():
    from scipy.stats import ks_2samp

    gen = np.random.default_rng(1)
    a, b = gen.normal(size=300), gen.normal(0.2, 1.0, size=400)
    assert ks_statistic(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40),
       st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
def test_ks_is_symmetric_and_bounded(a, b):
    k = ks_statistic(a, b)
    assert 0.0 <= k <= 1.0
    assert k == ks_statistic(b, a)


def test_ks_rejects_empty():
    with pytest.raises(ValueError):
        ks_statistic([], [1.0])


def test_ks_convergence_flags_shrinking_distances():
    gen = np.random.default_rng(2)
    samples = {e: gen.normal(1.0 / e, 1.0, size=1000) for e in (10, 20, 40, 80)}
    rep = ks_convergence(DistributionTrace(samples))
    assert rep.final_pair == (40, 80)
    assert set(rep.ks) == {(10, 20), (20, 40), (40, 80)}
    with pytest.raises(ValueError):
        ks_convergence(DistributionTrace({e: v[:50] for e, v in samples.items()}))


def test_containment_everything_inside_and_outside():
    b = LimitBounds(0.1, 0.3, 0.2, "fixed", 0, 0)
    inside = check_trajectory_containment(_record(np.full((20, 3), 0.2)), b, burn_in=5)
    assert inside.passed and inside.fraction == 1.0
    out = np.full((20, 3), 0.2)
    out[10, 1] = 0.5
    rep = check_trajectory_containment(_record(out), b, burn_in=5)
    assert not rep.passed
    assert rep.per_sample[1] == pytest.approx(13 / 14)


def test_containment_ignores_burn_in_and_respects_tau():
    b = LimitBounds(0.1, 0.3, 0.2, "fixed", 0, 0)
    R = np.full((10, 2), 0.305)
    R[:4] = 0.9
    assert check_trajectory_containment(_record(R), b, burn_in=3, tau=0.01).passed
    assert not check_trajectory_containment(_record(R), b, burn_in=3, tau=0.001).passed
    with pytest.raises(ValueError):
        check_trajectory_containment(_record(R), b, burn_in=9)


def test_monotone_allows_overshoot_but_not_retreat():
    ok = _record([[0.5], [0.3], [0.15], [0.22], [0.19]])
    assert check_monotone(ok, 0.2).passed
    bad = _record([[0.5], [0.6]])
    assert check_monotone(bad, 0.2).violations == [(0, 0)]
    # steps taken from inside the band are not judged
    assert check_monotone(_record([[0.205], [0.209]]), 0.2).checked == 0


def test_trajectory_variance():
    R = np.array([[9.0, 9.0], [1.0, 2.0], [3.0, 2.0]])
    assert trajectory_variance(_record(R), burn_in=0) == pytest.approx(0.5)


def test_attraction_interval_example():
    iv = AttractionInterval.build(0.2, 0.015, 1.0, 0.25)
    assert (iv.I1, iv.I2) == pytest.approx((0.14, 0.26))
    assert iv.contains(0.2) and not iv.contains(0.27)
    with pytest.raises(ValueError):
        AttractionInterval.build(0.2, 0.015, 0.0, 0.25)


def _probes(rho_o, mean_next, mean_fit=None):
    rho_o = np.atleast_2d(rho_o)
    z = np.zeros_like(rho_o)
    return RefitProbes(np.array([0]), rho_o, np.atleast_2d(mean_next),
                       z + 0.2 if mean_fit is None else np.atleast_2d(mean_fit), z,
                       z[None], 1)


def test_attraction_check_counts_direction_outside_interval():
    iv = AttractionInterval.build(0.2, 0.015, 1.0, 0.25)
    pr = _probes([0.5, 0.05, 0.2, 0.4], [0.45, 0.08, 0.3, 0.41])
    rep = attraction_check(pr, iv)
    assert rep.n_outside == 3
    assert rep.n_toward == 2
    assert not rep.passed()


def test_lambda_outside_picks_largest_consistent_value():
    # ratios (fit - eq)/(rho - eq): 0.5 at both far states, 0.1 near eq
    pr = _probes([0.6, 0.0, 0.22], [0, 0, 0], [0.4, 0.1, 0.202])
    lam = measure_lambda_outside(pr, 0.2, delta=0.01, gamma=1.0)
    assert lam == pytest.approx(0.5)


def test_drift_rho_interval_closed_form():
    g = InterventionModel(DET_CBRT, rho_eq=0.2)
    iv = drift_intervals(1 / 200, 0.3, 0.2, TRUTH, g, probes=SMALL)
    assert iv.I_rho == pytest.approx((0.2 - 1 / 30, 0.2 + 1 / 30))
    iv2 = drift_intervals(2 / 200, 0.3, 0.2, TRUTH, g, probes=SMALL)
    w1, w2 = iv.I_rho[1] - iv.I_rho[0], iv2.I_rho[1] - iv2.I_rho[0]
    assert w2 == pytest.approx(2 * w1)
    assert iv2.I_lim[0] <= iv.I_lim[0] and iv2.I_lim[1] >= iv.I_lim[1]


def test_drift_intervals_collapse_without_drift():
    g = InterventionModel(DET_CBRT, rho_eq=0.2)
    iv = drift_intervals(0.0, 0.3, 0.2, TRUTH, g, probes=SMALL)
    assert iv.I_rho == (0.2, 0.2)
    b = compute_limit_bounds(TRUTH, g, probes=SMALL)
    assert iv.I_lim == pytest.approx((b.lower, b.upper))


def test_drift_interval_clamped_flag():
    g = InterventionModel(DET_CBRT, rho_eq=0.05)
    iv = drift_intervals(0.05, 0.3, 0.05, TRUTH, g, probes=SMALL)
    assert iv.I_rho[0] == 0.0 and "I_rho clamped to [0, 1]" in iv.flags
    with pytest.raises(ValueError):
        drift_intervals(-1.0, 0.3, 0.2, TRUTH, g)


def test_drift_conclusion_classification():
    iv = DriftIntervals((0.15, 0.25), (0.18, 0.22), 0.01, 0.3, 0.2)
    R = np.array([[0.5, 0.5, 0.5], [0.2, 0.26, 0.6], [0.21, 0.25, 0.6]])
    rep = check_drift_conclusion(_record(R), iv, burn_in=0, tau=0.0, eps=0.02)
    assert rep.per_sample == ["contained", "endpoint", "neither"]
    assert rep.fraction == pytest.approx(2 / 3) and not rep.passed


def test_shock_recovery_with_wide_tolerance_recovers_immediately():
    R = np.random.default_rng(0).uniform(size=(30, 4))
    iv = DriftIntervals((0.2, 0.2), (0.2, 0.2), 0.0, 1.0, 0.2)
    rep = shock_recovery(_record(R), [10, 20], [iv] * 3, epsilon0=1.0)
    assert rep.n == [0, 0, 0] and rep.recovered()
    assert rep.segments == [(0, 10), (10, 20), (20, 30)]


def test_shock_recovery_counts_epochs_to_settle():
    R = np.full((20, 1), 0.2)
    R[[0, 1, 2, 10], 0] = 0.9
    R[19, 0] = 0.9
    iv = DriftIntervals((0.2, 0.2), (0.18, 0.22), 0.0, 1.0, 0.2)
    rep = shock_recovery(_record(R), [10], [iv, iv], epsilon0=0.05)
    assert rep.n == [3, None]
    assert not rep.recovered()
    with pytest.raises(ValueError):
        shock_recovery(_record(R), [10], [iv])


def test_cbrt_bounds_bracket_target_and_lower_below_it():
    spec, _ = build_spec(builtin_config("thm1"))
    b = compute_limit_bounds(spec.truth, spec.intervention, probes=ProbeSpec(n_x=2000))
    assert b.method == "grid-coupled"
    assert b.lower < 0.2 < b.upper
    assert b.upper - b.lower < 0.2


def test_refined_probes_agree_with_coarse_bounds():
    g = InterventionModel(DET_CBRT, rho_eq=0.2)
    coarse = ProbeSpec(n_x=2000)
    b1 = compute_limit_bounds(TRUTH, g, probes=coarse)
    b2 = compute_limit_bounds(TRUTH, g, probes=coarse.refined())
    assert abs(b1.lower - b2.lower) < 0.005 and abs(b1.upper - b2.upper) < 0.005


def test_stochastic_bounds_use_uncoupled_grid_and_bracket_target():
    sto = compute_limit_bounds(TRUTH, InterventionModel(UNIF_CBRT, rho_eq=0.2), probes=SMALL,
                               rng=RngStream(5))
    assert sto.method == "grid-monte-carlo" and sto.n_rho == SMALL.n_rho
    assert sto.lower < 0.2 < sto.upper
    again = compute_limit_bounds(TRUTH, InterventionModel(UNIF_CBRT, rho_eq=0.2), probes=SMALL,
                                 rng=RngStream(5))
    assert (again.lower, again.upper) == (sto.lower, sto.upper)


def test_identity_bounds_collapse_and_trajectories_escape_them():
    # the bound formula assumes a well-intentioned intervention; identity is not one
    g = InterventionModel(IDENTITY, rho_eq=0.2)
    b = compute_limit_bounds(TRUTH, g, probes=SMALL)
    assert b.lower == b.upper == 0.2
    R = np.tile([0.6, 0.05], (10, 1))
    assert not check_trajectory_containment(_record(R), b, burn_in=2).passed
