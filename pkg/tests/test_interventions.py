import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stacklab.core import RngStream
from stacklab.ground_truth import GroundTruthModel, eval_truth
from stacklab.interventions import (CLAMPED_CBRT, DET_CBRT, HEALTHCARE, IDENTITY, UNIF_CBRT,
                                    UNIF_LINEAR, HealthRules, InterventionModel,
                                    InterventionSchedule, apply_intervention,
                                    displacement_moments, expected_outcome,
                                    healthcare_intervene, intervention_at,
                                    verify_well_intentioned)

TRUTH = GroundTruthModel([0.3, 0.5, 0.7])


def test_cbrt_at_equivocal_risk_is_identity():
    g = InterventionModel(DET_CBRT, 0.2)
    x = np.array([0.3, -1.2, 4.0])
    assert np.array_equal(g.apply(0.2, x), x)


def test_cbrt_example_step():
    # cube root of 0.125 is 0.5, subtracted per coordinate
    g = InterventionModel(DET_CBRT, 0.2)
    out = apply_intervention(g, 0.325, np.ones(3))
    assert out == pytest.approx(np.full(3, 0.5), abs=1e-15)


def test_uniform_cbrt_mean_shift():
    g = InterventionModel(UNIF_CBRT, 0.2)
    rho, n = 0.45, 100_000
    X = np.zeros((n, 3))
    out = g.apply(np.full(n, rho), X, RngStream(0).generator())
    a = np.cbrt(rho - 0.2)
    # U ~ Uniform(-1/2, 1): mean 1/4, variance 3/16
    band = 3 * a * np.sqrt(3 / 16) / np.sqrt(n)
    assert np.all(np.abs(out.mean(axis=0) + a / 4) < band)
    # one scalar draw per row moves every coordinate together
    assert np.allclose(out[:, 0], out[:, 1]) and np.allclose(out[:, 1], out[:, 2])


def test_linear_kind_scale():
    g = InterventionModel(UNIF_LINEAR, 0.5, scale=0.1)
    assert g.magnitude(0.9, None) == pytest.approx(0.04)


def test_clamped_signed_kind():
    g = InterventionModel(CLAMPED_CBRT, 0.2, signs=(1, -1, 1), clamp=(-4, 4))
    out = g.apply(0.325, np.array([3.9, 3.9, -3.9]))
    assert out == pytest.approx([3.4, 4.0, -4.0])


def test_model_validation():
    with pytest.raises(ValueError):
        InterventionModel(DET_CBRT, 1.5)
    with pytest.raises(ValueError):
        InterventionModel("teleport")
    with pytest.raises(ValueError):
        InterventionModel(CLAMPED_CBRT, 0.2)
    with pytest.raises(ValueError):
        InterventionModel(HEALTHCARE, 0.2)
    with pytest.raises(ValueError):
        InterventionModel(DET_CBRT, 0.2).apply(1.2, np.zeros(3))
    with pytest.raises(ValueError):
        InterventionModel(UNIF_CBRT, 0.2).apply(0.5, np.zeros(3))


def test_schedule_switches_at_change_points():
    a, b = InterventionModel(DET_CBRT, 0.2), InterventionModel(IDENTITY, 0.2)
    s = InterventionSchedule((10,), (a, b))
    assert intervention_at(s, 9) is a and intervention_at(s, 10) is b
    with pytest.raises(ValueError):
        InterventionSchedule((10,), (a,))


RULES = HealthRules(continuous=(0,), binary=(1, 2))


def test_health_diet_interval():
    gen = RngStream(1).generator()
    x = np.tile([3.0, 0.0, 1.0], (20_000, 1))
    out = healthcare_intervene(RULES, 0.4, 0.2, x, gen)
    # d = 0.2: U(3 - 3.5 * 0.2, 3 + 0.5 * 0.2) = U(2.3, 3.1)
    assert out[:, 0].min() >= 2.3 and out[:, 0].max() <= 3.1
    assert out[:, 0].mean() == pytest.approx(2.7, abs=0.01)


def test_health_inverted_interval_when_below_target():
    x = np.tile([3.0, 0.0, 1.0], (20_000, 1))
    out = healthcare_intervene(RULES, 0.0, 0.2, x, RngStream(2).generator())
    assert out[:, 0].min() >= 2.9 and out[:, 0].max() <= 3.7


def test_health_binary_absorbing_cases():
    x = np.tile([5.0, 0.0, 1.0], (5000, 1))
    above = healthcare_intervene(RULES, 0.9, 0.2, x, RngStream(3).generator())
    assert np.all(above[:, 1] == 0)
    below = healthcare_intervene(RULES, 0.0, 0.2, x, RngStream(4).generator())
    assert np.all(below[:, 2] == 1)


def test_health_binary_switch_rates():
    from scipy.special import expit
    d = 0.6
    x = np.tile([5.0, 1.0, 0.0], (100_000, 1))
    above = healthcare_intervene(RULES, 0.2 + d, 0.2, x, RngStream(5).generator())
    p_keep = 2 * (1 - expit(d / 2))
    assert above[:, 1].mean() == pytest.approx(p_keep, abs=3 * np.sqrt(p_keep / 1e5) + 1e-3)
    below = healthcare_intervene(RULES, 0.2 - 0.15, 0.2, x, RngStream(6).generator())
    p_on = 2 * expit(0.15 / 2) - 1
    assert below[:, 2].mean() == pytest.approx(p_on, abs=3 * np.sqrt(p_on / 1e5) + 1e-3)


def test_health_continuous_clamped():
    x = np.tile([0.5, 0.0, 0.0], (1000, 1))
    out = healthcare_intervene(RULES, 1.0, 0.0, x, RngStream(7).generator())
    assert out[:, 0].min() >= 0.0


def test_expected_outcome_closed_form_matches_quadrature():
    # E logistic(0.3 - 0.7 U), U ~ Uniform(-1/2, 1), by mpmath quadrature
    truth = GroundTruthModel([1.0])
    g = InterventionModel(UNIF_LINEAR, 0.5, scale=1.0)
    mean, se = expected_outcome(g, truth, 0, 0.5 + 0.7, np.array([[0.3]]))
    assert float(mean[0]) == pytest.approx(0.530514365050250084, abs=1e-12)
    assert float(se[0]) == 0.0


def test_expected_outcome_closed_form_matches_monte_carlo():
    g = InterventionModel(UNIF_CBRT, 0.2)
    X = np.random.default_rng(0).normal(size=(5, 3))
    exact, _ = expected_outcome(g, TRUTH, 0, 0.6, X)
    gen = RngStream(3).generator()
    n = 200_000
    vals = np.stack([eval_truth(TRUTH, 0, g.apply(np.full(n, 0.6), np.tile(x, (n, 1)), gen))
                     for x in X])
    se = vals.std(axis=1) / np.sqrt(n)
    assert np.all(np.abs(vals.mean(axis=1) - exact) < 3 * se + 1e-12)


def test_identity_is_not_well_intentioned():
    g = InterventionModel(IDENTITY, 0.2)
    rep = verify_well_intentioned(g, TRUTH, np.linspace(0, 1, 11), np.zeros((3, 3)))
    assert rep.gamma == 0.0
    assert np.all(rep.movement == 0)
    n_off = np.sum(np.abs(rep.rho - 0.2) > 0)
    assert len(rep.violations) == n_off


def test_cbrt_well_intentioned_on_grid():
    beta = RngStream(0).derive("beta").generator().uniform(0, 1, size=3)
    truth = GroundTruthModel(beta)
    g = InterventionModel(DET_CBRT, 0.2)
    X = RngStream(0).derive("x").generator().uniform(-3, 3, size=(50, 3))
    rep = verify_well_intentioned(g, truth, np.linspace(0, 1, 50), X, tol=1e-12)
    assert rep.violations == [] and rep.gamma > 0


def test_stochastic_kinds_neutral_at_equivocal_risk():
    X = np.random.default_rng(1).normal(size=(20, 3))
    for g in (InterventionModel(UNIF_CBRT, 0.2), InterventionModel(UNIF_LINEAR, 0.2, scale=0.1)):
        mean, _ = expected_outcome(g, TRUTH, 0, 0.2, X)
        assert np.allclose(mean, eval_truth(TRUTH, 0, X), atol=1e-12)
    g = InterventionModel(UNIF_CBRT, 0.2, clamp=(-10, 10))
    mean, se = expected_outcome(g, TRUTH, 0, 0.2, X, 4000, RngStream(2).generator())
    assert np.all(np.abs(mean - eval_truth(TRUTH, 0, X)) <= 3 * se + 1e-12)


def test_displacement_moments():
    g = InterventionModel(DET_CBRT, 0.2)
    m, v = displacement_moments(g, 0.325, np.zeros(3), replicates=10)
    assert m == pytest.approx(0.5 * np.sqrt(3)) and v == pytest.approx(0.0, abs=1e-24)


@settings(max_examples=60, deadline=None)
@given(rho=st.floats(0, 1), rho_eq=st.floats(0.01, 0.99),
       x=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_cbrt_moves_risk_toward_equivocal_value(rho, rho_eq, x):
    # with positive coefficients, the deterministic step never moves the
    # logit of the risk away from rho_eq
    g = InterventionModel(DET_CBRT, rho_eq)
    x = np.array(x)
    before = TRUTH.linear(0, x)
    after = TRUTH.linear(0, g.apply(rho, x))
    assert np.sign(rho - rho_eq) * (after - before) <= 1e-12
