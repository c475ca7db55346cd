import math

import numpy as np
import pytest

from aisml2r.adaptive_is import RobbinsMonroConfig, ThetaSchedule
from aisml2r.calibration import LevelPlan, StructuralParams, plan, solve_weights
from aisml2r.estimators import (
    EstimateResult,
    estimate_bias_variance,
    improvement_factor,
    run_aisml2r,
    run_crude_mc,
    run_ml2r,
)
from aisml2r.path_kernel import gbm
from aisml2r.payoffs import ReferencePrice, PayoffSpec
from aisml2r.streams import Streams

SP = StructuralParams(alpha=1.0, beta=2.0, V1=7.085, var_Y0=1208.0, M=8)
J0 = 29.4987


def manual_plan(N_l, M=2, alpha=1.0, h=1.0):
    L = len(N_l)
    N = sum(N_l)
    return LevelPlan(0.1, L, h, tuple(n / N for n in N_l), N, tuple(N_l), solve_weights(alpha, M, L), 1.0, M)


def test_constant_payoff_exact(euro_model, constant_payoff):
    p = plan(2**-4, SP)
    r = run_ml2r(euro_model, constant_payoff(5.0), "milstein", p, Streams(1))
    assert r.estimate == 5.0


def test_level_one_plan_is_crude_mc(euro_model, euro_payoff):
    p = manual_plan([3000])
    a = run_ml2r(euro_model, euro_payoff, "euler", p, Streams(2))
    b = run_crude_mc(euro_model, euro_payoff, "euler", 1, 3000, Streams(2))
    assert a.estimate == b.estimate and a.level_vars == b.level_vars


def test_collapsed_theta_domain_matches_ml2r(euro_model, euro_payoff):
    p = plan(2**-4, SP)
    a = run_ml2r(euro_model, euro_payoff, "milstein", p, Streams(3))
    b = run_aisml2r(euro_model, euro_payoff, "milstein", p, ThetaSchedule.constant(0.0, p.L), Streams(3), SP, RobbinsMonroConfig(lo=0.0, hi=0.0))
    assert a.estimate == b.estimate
    assert a.level_means == b.level_means and a.level_vars == b.level_vars
    assert b.theta.final == (0.0,) * p.L


def test_adaptive_constant_payoff_unbiased(euro_model, constant_payoff):
    p = manual_plan([20000], M=8)
    r = run_aisml2r(euro_model, constant_payoff(5.0), "milstein", p, ThetaSchedule.constant(0.8, 1), Streams(4), SP)
    se = math.sqrt(r.level_vars[0] / r.level_counts[0])
    assert se > 0
    assert abs(r.estimate - 5.0) <= 3 * se


def test_adaptive_thetas_in_domain(euro_model, euro_payoff):
    p = plan(2**-4, SP)
    r = run_aisml2r(euro_model, euro_payoff, "milstein", p, ThetaSchedule.constant(0.9, p.L), Streams(5), SP)
    assert all(0.0 <= t <= 1.0 for t in r.theta.final)


def test_crude_constant_and_zero_vol(constant_payoff):
    m = gbm(100, 0.06, 0.0, 1.0)
    r = run_crude_mc(m, constant_payoff(2.5), "euler", 8, 50, Streams(6))
    assert r.estimate == 2.5
    spec = PayoffSpec.european_call(80.0, 0.06, 1.0)
    r = run_crude_mc(m, spec, "euler", 8, 50, Streams(6))
    expect = math.exp(-0.06) * (100 * (1 + 0.06 / 8) ** 8 - 80)
    assert r.estimate == pytest.approx(expect, rel=1e-13)
    assert r.level_vars[0] == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        run_crude_mc(m, spec, "euler", 8, 0, Streams(6))


def test_telescoping_matches_fine_grid_crude(euro_model, euro_payoff):
    """Unit weights turn the estimator into plain multilevel MC for the 4-step grid."""
    p = manual_plan([200_000, 60_000, 20_000])
    ml = run_ml2r(euro_model, euro_payoff, "euler", p, Streams(7), weights=(1.0, 1.0, 1.0))
    cr = run_crude_mc(euro_model, euro_payoff, "euler", 4, 200_000, Streams(8))
    se_ml = math.sqrt(sum(v / n for v, n in zip(ml.level_vars, ml.level_counts)))
    se_cr = math.sqrt(cr.level_vars[0] / cr.level_counts[0])
    assert abs(ml.estimate - cr.estimate) <= 3 * math.hypot(se_ml, se_cr)


def test_determinism_and_round_trip(euro_model, euro_payoff):
    p = plan(2**-4, SP)
    a = run_aisml2r(euro_model, euro_payoff, "milstein", p, ThetaSchedule.constant(0.9, p.L), Streams(9), SP)
    b = run_aisml2r(euro_model, euro_payoff, "milstein", p, ThetaSchedule.constant(0.9, p.L), Streams(9), SP)
    assert a.to_dict(with_time=False) == b.to_dict(with_time=False)
    assert EstimateResult.from_dict(a.to_dict()).to_dict() == a.to_dict()


def fake(values):
    return [EstimateResult("ml2r", v, (v,), (0.0,), (1,), 10.0) for v in values]


def test_bias_variance_examples():
    s = estimate_bias_variance(fake([J0, J0, J0]), ReferencePrice("x", J0, "published"))
    assert (s.bias, s.variance, s.rmse) == (0.0, 0.0, 0.0)
    d = 0.25
    s = estimate_bias_variance(fake([J0 - d, J0 + d]), J0)
    assert s.bias == pytest.approx(0.0, abs=1e-12)
    assert s.variance == pytest.approx(2 * d * d)
    assert s.rmse == pytest.approx(math.sqrt(2) * d)
    with pytest.raises(ValueError):
        estimate_bias_variance(fake([J0]), J0)
    assert improvement_factor(2.0, 3.0, 2.0, 3.0) == 1.0


def test_adaptive_unbiased_over_replications(euro_model, euro_payoff):
    p = plan(2**-5, SP)
    est = [
        run_aisml2r(euro_model, euro_payoff, "milstein", p, ThetaSchedule.constant(0.97, p.L), Streams.for_replication(31, r), SP).estimate
        for r in range(50)
    ]
    se = np.std(est, ddof=1) / math.sqrt(50)
    assert abs(np.mean(est) - J0) <= 3 * se
