import numpy as np
import pytest

from stacklab.core import RngStream
from stacklab.ground_truth import (DriftSpec, GroundTruthModel, draw_outcome, eval_truth,
                                   even_change_points, sample_shock_sequence, shocked_truth)


def test_zero_linear_predictor_gives_half():
    m = GroundTruthModel([1.0, -2.0], intercept=0.5)
    assert eval_truth(m, 0, np.array([0.5, 0.5])) == pytest.approx(0.5)


def test_healthcare_intercept_baseline():
    # logistic(-3.32), evaluated independently with mpmath
    m = GroundTruthModel(np.zeros(17), intercept=-3.32)
    assert eval_truth(m, 0, np.zeros(17)) == pytest.approx(0.03489140853173684, abs=1e-12)


def test_batch_shapes():
    m = GroundTruthModel([1.0, 1.0, 1.0])
    X = np.zeros((4, 5, 3))
    assert eval_truth(m, 0, X).shape == (4, 5)


def test_extreme_covariate_gives_certain_outcome():
    m = GroundTruthModel([1.0])
    d = draw_outcome(m, 0, np.full((1000, 1), 100.0), RngStream(0))
    assert np.all(d.y == 1)
    d0 = draw_outcome(m, 0, np.full((1000, 1), -100.0), RngStream(0))
    assert np.all(d0.y == 0)


def test_outcome_rate_within_binomial_band():
    # logit(0.2) as the only covariate value with unit coefficient
    m = GroundTruthModel([1.0])
    x = np.full((100_000, 1), np.log(0.25))
    y = draw_outcome(m, 0, x, RngStream(5)).y
    assert 0.196 <= y.mean() <= 0.204


def test_outcome_draws_reproducible():
    m = GroundTruthModel([0.3, -0.2])
    x = np.random.default_rng(0).normal(size=(50, 2))
    a = draw_outcome(m, 0, x, RngStream(1).derive("y"))
    b = draw_outcome(m, 0, x, RngStream(1).derive("y"))
    assert np.array_equal(a.y, b.y)


def test_even_change_points_for_two_hundred_epochs():
    assert even_change_points(200, 3) == (50, 100, 150)
    assert even_change_points(10, 0) == ()


def test_shock_segments():
    spec = DriftSpec("shocks", change_points=(50, 100, 150))
    truth = shocked_truth(spec, sample_shock_sequence(spec, RngStream(0)))
    assert [truth.segment(e) for e in (0, 49, 50, 99, 100, 149, 150, 199)] == [0, 0, 1, 1, 2, 2, 3, 3]
    assert not np.array_equal(truth.beta_at(49), truth.beta_at(50))


def test_shock_coefficient_support():
    spec = DriftSpec("shocks", change_points=tuple(range(1, 3334)))
    models = sample_shock_sequence(spec, RngStream(1), p=3)
    b = np.array([m.beta for m in models])
    assert b.size >= 10_000 and b.min() >= -2 and b.max() <= 2


def test_zero_change_points_matches_static_model():
    spec = DriftSpec("shocks", change_points=())
    seg = sample_shock_sequence(spec, RngStream(0))
    truth = shocked_truth(spec, seg)
    x = np.random.default_rng(1).normal(size=(20, 3))
    static = GroundTruthModel(seg[0].beta)
    for e in (0, 10, 500):
        assert np.array_equal(eval_truth(truth, e, x), eval_truth(static, e, x))


def test_bounded_drift_stays_within_alpha_of_base_in_q_space():
    m = GroundTruthModel([0.5, 0.5], drift=DriftSpec("bounded", alpha=0.005, seed=3))
    static = GroundTruthModel([0.5, 0.5])
    x = np.random.default_rng(2).normal(size=(30, 2))
    shifts = np.array([m.linear(e, x) - static.linear(e, x) for e in range(500)])
    assert np.abs(shifts).max() <= 0.005
    # shifts are not all identical, and are reproducible
    assert np.ptp(shifts) > 0.005
    assert m.shift_at(7) == GroundTruthModel([0.5, 0.5], drift=m.drift).shift_at(7)


def test_drift_spec_validation():
    with pytest.raises(ValueError):
        DriftSpec("bounded", alpha=-1)
    with pytest.raises(ValueError):
        DriftSpec("shocks", change_points=(5, 5))
    with pytest.raises(ValueError):
        DriftSpec("sideways")
