import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as stn
from scipy import integrate, stats

from aisml2r.calibration import (
    Branch,
    ConditioningError,
    LevelPlan,
    StructuralParams,
    clt_variance_diagnostic,
    estimate_V1,
    estimate_var_Y0,
    optimal_depth,
    plan,
    solve_weights,
    weight_bound,
)
from aisml2r.estimators import run_ml2r
from aisml2r.streams import Streams

# Long-pilot value (2e6 coupled pairs, seed 100) for the European call with Milstein.
V1_GOLDEN = 6.5919


def lagrange_weights(alpha, M, L):
    """Independent oracle: w_j = prod_{k != j} x_k / (x_k - x_j), x_j = n_j^-alpha."""
    x = [float(M) ** (-alpha * j) for j in range(L)]
    return np.array([math.prod(x[k] / (x[k] - x[j]) for k in range(L) if k != j) for j in range(L)])


def test_weights_examples():
    ws = solve_weights(1, 2, 1)
    assert ws.w == (1.0,) and ws.W_tilde == (1.0,)
    ws = solve_weights(1, 2, 2)
    assert np.allclose(ws.w, (-1, 2), atol=1e-14) and np.allclose(ws.W_tilde, (1, 2), atol=1e-14)
    ws = solve_weights(1, 2, 3)
    assert np.allclose(ws.w, (1 / 3, -2, 8 / 3), atol=1e-14)
    assert np.allclose(ws.W_tilde, (1, 2 / 3, 8 / 3), atol=1e-14)


@given(stn.sampled_from([0.5, 1.0, 2.0]), stn.integers(2, 10), stn.integers(1, 10))
def test_weights_match_lagrange_oracle(alpha, M, L):
    ws = solve_weights(alpha, M, L)
    oracle = lagrange_weights(alpha, M, L)
    assert np.allclose(ws.w, oracle, rtol=1e-9, atol=1e-9 * np.max(np.abs(oracle)))


def test_weight_guards():
    with pytest.raises(ConditioningError):
        solve_weights(1, 2, 16)
    with pytest.raises(ValueError):
        solve_weights(0, 2, 3)
    with pytest.raises(ValueError):
        solve_weights(1, 1, 3)


def test_weight_set_round_trip():
    ws = solve_weights(1, 8, 4)
    assert type(ws).from_dict(ws.to_dict()) == ws


def test_weight_bound_dominates():
    for alpha in (0.5, 1, 2):
        for M in range(2, 11):
            bound = weight_bound(alpha, M)
            for L in range(1, 13):
                assert max(abs(x) for x in solve_weights(alpha, M, L).W_tilde) <= bound * (1 + 1e-12)


def sp_example(**kw):
    d = dict(alpha=1.0, beta=2.0, V1=7.0, var_Y0=1200.0, M=8)
    d.update(kw)
    return StructuralParams(**d)


def test_lambda_identity():
    sp = sp_example()
    assert sp.lam == math.sqrt(7.0 / 1200.0)
    assert StructuralParams.from_dict(sp.to_dict()) == sp


def test_depth_hand_example():
    sp = sp_example(M=2)
    assert optimal_depth(2**-5, sp) == pytest.approx(0.5 + math.sqrt(10.25))
    assert plan(2**-5, sp).L == 4


@given(stn.floats(1e-4, 0.9), stn.sampled_from([2, 4, 6, 8]), stn.sampled_from([1.0, 2.0]), stn.floats(0.1, 50))
def test_plan_invariants(eps, M, beta, V1):
    sp = sp_example(M=M, beta=beta, V1=V1)
    p = plan(eps, sp)
    assert abs(sum(p.mu) - 1) <= 1e-12
    assert all(n >= 1 for n in p.N_l)
    assert p.N_l == tuple(max(1, math.ceil(p.N * m)) for m in p.mu)
    assert p.h == sp.coarsest_h and p.weights.L == p.L
    assert LevelPlan.from_dict(p.to_dict()) == p


def test_allocation_exponent():
    """Level shares decay like |W~_l| M^{-(1+beta)(l-1)/2} beyond level 1."""
    sp = sp_example(M=4, beta=2.0)
    p = plan(2**-9, sp)
    Wt = np.abs(p.weights.W_tilde)
    for l in range(2, p.L):
        ratio = (p.mu[l] / Wt[l]) / (p.mu[l - 1] / Wt[l - 1])
        assert ratio == pytest.approx(4 ** (-1.5), rel=1e-12)


@given(stn.floats(1e-4, 0.5), stn.floats(0.1, 0.99))
def test_planner_monotone(eps, shrink):
    sp = sp_example()
    a, b = plan(eps, sp), plan(eps * shrink, sp)
    assert b.L >= a.L and b.N >= a.N


def test_halving_eps_quadruples_N():
    sp = sp_example()
    for k in range(3, 12):
        a, b = plan(2.0**-k, sp), plan(2.0 ** -(k + 1), sp)
        if a.L == b.L:
            assert 3.9 <= b.N / a.N <= 4.3


def test_plan_rejects_and_clamps():
    with pytest.raises(ValueError):
        plan(1.5, sp_example())
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        p = plan(0.5, sp_example(c_inf=1e-6, A=0.1, M=2))
    assert p.L == 1 and any("clamping" in str(x.message) for x in w)


def test_constant_payoff_pilots(euro_model, constant_payoff):
    rng = Streams(3).level(2)
    assert estimate_V1(euro_model, constant_payoff(4.0), "milstein", 1.0, 1000, rng) == 0.0
    assert estimate_var_Y0(euro_model, constant_payoff(4.0), "milstein", 1.0, 1000, rng) == 0.0


def test_var_scales_quadratically(euro_model, euro_payoff):
    rng = Streams(4).level(1)
    v1 = estimate_var_Y0(euro_model, euro_payoff, "euler", 1.0, 5000, rng)
    v3 = estimate_var_Y0(euro_model, lambda x, m=None: 3.0 * euro_payoff(x), "euler", 1.0, 5000, rng)
    assert v3 == pytest.approx(9 * v1, rel=1e-12)


def test_var_Y0_quadrature_oracle(euro_model, euro_payoff):
    """One Euler step: X = 100 (1 + r + vol Z); compare with Gaussian quadrature."""
    f = lambda z: euro_payoff(100 * (1 + 0.06 + 0.4 * z))
    pdf = stats.norm.pdf
    kink = (80 / 100 - 1.06) / 0.4
    moment = lambda p: integrate.quad(lambda z: float(f(z)) ** p * pdf(z), kink, 12, limit=200)[0]
    m1, m2 = moment(1), moment(2)
    var = m2 - m1 * m1
    mu4 = integrate.quad(lambda z: (float(f(z)) - m1) ** 4 * pdf(z), -12, 12, points=[kink], limit=200)[0]
    n = 100_000
    se = math.sqrt((mu4 - var * var) / n)
    est = estimate_var_Y0(euro_model, euro_payoff, "euler", 1.0, n, Streams(21).level(1))
    assert abs(est - var) <= 3 * se


def test_V1_stable_across_seeds(euro_model, euro_payoff):
    for seed in range(3):
        v = estimate_V1(euro_model, euro_payoff, "milstein", 1.0, 100_000, Streams(seed).level(2))
        assert v > 0
        assert abs(v / V1_GOLDEN - 1) <= 0.2


def test_V1_doubling_pilot_consistent(euro_model, euro_payoff):
    rng = Streams(8).level(2)
    a = estimate_V1(euro_model, euro_payoff, "milstein", 1.0, 50_000, rng)
    b = estimate_V1(euro_model, euro_payoff, "milstein", 1.0, 100_000, rng)
    # the second run shares its first half with the first: the other half must agree
    rest = 2 * b - a
    # standard error of the mean of the scaled squared differences from the larger sample
    from aisml2r.path_kernel import simulate_paths
    from aisml2r.payoffs import batch_payoffs

    batch = simulate_paths(euro_model, "milstein", 2, 10, 1.0, 0.0, False, rng, 0, 100_000)
    f, c = batch_payoffs(euro_payoff, batch)
    scale = (1 + 10**-1.0) ** -2
    se = scale * np.std((f - c) ** 2) / math.sqrt(50_000)
    assert abs(rest - a) <= 3 * math.sqrt(2) * se


def test_clt_diagnostic_trivial_cases():
    sp = sp_example()
    assert clt_variance_diagnostic(sp, [0.0, 0.0, 0.0], Branch.BETA_GT_1) == 0.0
    sp1 = sp_example(beta=1.0, alpha=1.0, M=4)
    v_inf = sp1.V1 * (1 + 4**0.5) ** 2
    assert clt_variance_diagnostic(sp1, [1.0, v_inf], Branch.BETA_LE_1) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        clt_variance_diagnostic(sp_example(beta=2.0, alpha=1.0), [1.0, 2.0], Branch.BETA_LE_1)


def test_clt_diagnostic_near_planned_normalisation(euro_model, euro_payoff):
    """The plan targets variance eps^2 / (1 + 1/(2 alpha L)); the diagnostic should sit near it."""
    sp = sp_example(V1=7.085, var_Y0=1207.98)
    p = plan(2**-5, sp)
    r = run_ml2r(euro_model, euro_payoff, "milstein", p, Streams(5))
    varY = [r.level_vars[0]] + [v * 8.0 ** (2 * l) for l, v in enumerate(r.level_vars[1:], 1)]
    d = clt_variance_diagnostic(sp, varY, "beta_gt_1")
    assert math.isfinite(d) and d > 0
    assert d == pytest.approx(1 / (1 + 1 / (2 * p.L)), rel=0.15)
