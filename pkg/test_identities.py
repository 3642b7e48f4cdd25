"""
Test Cases Module - identities
GG residuals, concentration of H_p, free-energy curves and proof inequalities
"""
import math

import numpy as np
import pytest

from errors import ArityError, BudgetExceededError, ConfigError, MissingDegreeError
from exact import OverlapMonomial
from identities import (
    Budgets,
    ClippedPolynomial,
    ConstantFunction,
    GGQuery,
    MonomialFunction,
    SpinFunction,
    analytic_total,
    concentration_scan,
    concentration_statistic,
    convexity_secant_bound,
    delta_bound_check,
    derivative_identity_check,
    free_energy_curve,
    gap_derivative_check,
    gg_closed_form,
    gg_residual,
    integration_by_parts_check,
)
from model import ModelParameters
from sampler import Schedule


def r12_squared(n=2):
    return MonomialFunction(OverlapMonomial(n, {(0, 1): 2}))


def flat_model():
    """N=1, p=2: H_2 = g_11 does not depend on the configuration"""
    return ModelParameters(1, ((2, 0.0),), 0.4)


def test_case_1_constant_function_residual_vanishes():
    """
    Test Case 1: f = 1 gives a zero residual by replica symmetry
    - exact mode, N=8, 5 realizations, (n, p) in {2, 3} x {1, 2, 3}
    """
    params = ModelParameters(8, ((1, 0.6), (2, 0.9), (3, 0.4)), 0.2)
    budgets = Budgets(n_disorder=5, master_seed=101)
    for n in (2, 3):
        for p in (1, 2, 3):
            residual = gg_residual(GGQuery(p, n, ConstantFunction(n)), params, "exact", budgets)
            assert residual.mean <= 1e-12


def test_case_2_closed_form_residual_exact_mode():
    """
    Test Case 2: No couplings, no field, p=2, n=2, f = R_12^2
    - residual = (N-1)/N^3 to 1e-10 for N in {4, 6, 8}; 3/64 at N=4
    """
    assert gg_closed_form(4) == 0.046875
    budgets = Budgets(n_disorder=2, master_seed=0)
    for N in (4, 6, 8):
        residual = gg_residual(GGQuery(2, 2, r12_squared()), ModelParameters(N), "exact", budgets)
        assert residual.mean == pytest.approx((N - 1) / N ** 3, abs=1e-10)
        assert residual.std_error == pytest.approx(0.0, abs=1e-12)


def test_case_3_closed_form_residual_sampled():
    """
    Test Case 3: Same closed form in mc mode, 2 x 10^4 samples, within 3 SE
    """
    schedule = Schedule(burn_in=10, thinning=1, sweeps=1000)
    budgets = Budgets(n_disorder=20, master_seed=3, schedule=schedule)
    residual = gg_residual(GGQuery(2, 2, r12_squared()), ModelParameters(4), "mc", budgets)
    assert residual.deviation(3 / 64) <= 3.0


def test_case_4_sampled_residual_matches_enumeration():
    """
    Test Case 4: N=8, p=2, beta_2=1, h=0.3, f = R_12^2
    - mc and exact residuals on the same realizations agree within 3 combined SE
    """
    params = ModelParameters(8, ((2, 1.0),), 0.3)
    query = GGQuery(2, 2, r12_squared())
    exact = gg_residual(query, params, "exact", Budgets(n_disorder=6, master_seed=55))
    schedule = Schedule(burn_in=300, thinning=4, sweeps=3000)
    sampled = gg_residual(query, params, "mc", Budgets(n_disorder=6, master_seed=55, schedule=schedule))
    assert abs(sampled.mean - exact.mean) <= 3 * sampled.combined_error(exact)


def test_case_5_direct_path_agrees_with_factorized_path():
    """
    Test Case 5: A clipped polynomial equal to R_12^2 goes through direct enumeration
    - its residual equals the monomial residual to 1e-10
    """
    params = ModelParameters(5, ((1, 0.3), (2, 0.8)), 0.1)
    budgets = Budgets(n_disorder=3, master_seed=8)
    clipped = ClippedPolynomial(2, [(1.0, OverlapMonomial(2, {(0, 1): 2}))])
    assert clipped.monomial is None
    by_monomial = gg_residual(GGQuery(2, 2, r12_squared()), params, "exact", budgets)
    by_direct = gg_residual(GGQuery(2, 2, clipped), params, "exact", budgets)
    assert by_direct.mean == pytest.approx(by_monomial.mean, abs=1e-10)


def test_case_6_query_validation():
    """
    Test Case 6: Invalid GG queries
    - n < 2, arity mismatch, unknown mode, mc without schedule
    - spin functions beyond the direct cap
    """
    with pytest.raises(ConfigError):
        GGQuery(2, 1, ConstantFunction(1))
    with pytest.raises(ArityError):
        GGQuery(2, 3, r12_squared(2))
    params = ModelParameters(4, ((2, 1.0),))
    query = GGQuery(2, 2, r12_squared())
    with pytest.raises(ConfigError):
        gg_residual(query, params, "annealed", Budgets())
    with pytest.raises(ConfigError):
        gg_residual(query, params, "mc", Budgets())

    spin_f = SpinFunction(2, lambda a, b: a[:, 0] * b[:, 0])
    with pytest.raises(BudgetExceededError):
        gg_residual(GGQuery(1, 2, spin_f), ModelParameters(10, ((2, 1.0),)), "exact", Budgets())


def test_case_7_spin_functions_are_bounded():
    """
    Test Case 7: Spin functions leaving [-1, 1] are rejected
    """
    doubled = SpinFunction(2, lambda a, b: 2.0 * a[:, 0])
    with pytest.raises(ValueError):
        doubled([np.ones((3, 4)), np.ones((3, 4))])


def test_case_8_concentration_closed_form():
    """
    Test Case 8: Every beta zero, h=0, p=1, N=16, 10^3 realizations
    - total within 3 SE of sqrt(2/(pi N)) ~ 0.1994711
    - thermal part carries the whole value, disorder part 0
    """
    params = ModelParameters(16, ((1, 0.0),))
    report = concentration_statistic(1, params, "exact", Budgets(n_disorder=1000, master_seed=16))
    assert analytic_total(16) == pytest.approx(0.1994711, abs=1e-7)
    assert report.total.deviation(analytic_total(16)) <= 3.0
    assert report.thermal.mean == pytest.approx(report.total.mean, abs=1e-12)
    assert report.disorder.mean == pytest.approx(0.0, abs=1e-12)
    assert report.theorem_applies


def test_case_9_concentration_decay_surrogate():
    """
    Test Case 9: p=2, beta_2=1, h=0.3, N in {4, ..., 12}, exact mode
    - total at N=12 below total at N=4 (finite-N surrogate of the limit)
    - the triangle inequality holds at every N
    """
    params = ModelParameters(4, ((2, 1.0),), 0.3)
    scan = concentration_scan(2, [4, 6, 8, 10, 12], params, "exact", Budgets(n_disorder=20, master_seed=2))
    assert len(scan.table) == 5
    assert scan.surrogate_decreasing
    assert scan.table["total"].iloc[-1] < scan.table["total"].iloc[0]
    assert scan.table["analytic_total"].isna().all()
    for report in scan.reports:
        assert report.triangle_slack() >= 0.0
        assert min(report.total.mean, report.thermal.mean, report.disorder.mean) >= 0.0


def test_case_10_concentration_scan_edges():
    """
    Test Case 10: Scan edge cases
    - analytic column when every beta vanishes
    - a single N equals concentration_statistic
    - N_list out of order, or p missing from the model, raises
    - odd p >= 3 is computed but flagged
    """
    budgets = Budgets(n_disorder=4, master_seed=9)
    off = ModelParameters(4, ((1, 0.0),))
    scan = concentration_scan(1, [4, 6], off, "exact", budgets)
    assert list(scan.table["analytic_total"]) == pytest.approx([math.sqrt(2 / (math.pi * N)) for N in (4, 6)])

    params = ModelParameters(6, ((2, 0.8),), 0.1)
    single = concentration_scan(2, [6], params, "exact", budgets)
    direct = concentration_statistic(2, params, "exact", budgets)
    assert len(single.table) == 1
    assert single.reports[0].total == direct.total

    with pytest.raises(ConfigError):
        concentration_scan(2, [8, 6], params, "exact", budgets)
    with pytest.raises(MissingDegreeError):
        concentration_statistic(3, params, "exact", budgets)

    odd = concentration_statistic(3, ModelParameters(5, ((3, 0.5),)), "exact", budgets)
    assert not odd.theorem_applies
    assert odd.metadata["theorem_applies"] is False


def test_case_11_sampled_concentration_is_consistent():
    """
    Test Case 11: mc-mode concentration report
    - non-negative parts, triangle inequality within noise
    """
    params = ModelParameters(6, ((2, 0.8),), 0.3)
    schedule = Schedule(burn_in=100, sweeps=600)
    report = concentration_statistic(2, params, "mc", Budgets(n_disorder=4, master_seed=4, schedule=schedule))
    assert report.mode == "mc"
    assert min(report.total.mean, report.thermal.mean, report.disorder.mean) >= 0.0
    assert report.triangle_slack() >= 0.0


def test_case_12_free_energy_curve_closed_forms():
    """
    Test Case 12: p=1, h=0, other betas zero, grid around x=0
    - F(0) = log 2, F'(0) = 0 by symmetry
    - F''(0) = (1/N) E sum g_i^2, within 3 SE of 1
    """
    params = ModelParameters(10, ((1, 0.0),))
    curve = free_energy_curve(1, [-0.1, 0.0, 0.1], params, "exact", Budgets(n_disorder=200, master_seed=12))
    assert curve.F[1].mean == pytest.approx(math.log(2), abs=1e-12)
    assert curve.F_prime[1].mean == pytest.approx(0.0, abs=1e-12)
    assert curve.F_second[1].deviation(1.0) <= 3.0
    frame = curve.to_frame()
    assert list(frame.columns[:4]) == ["x", "F", "F_se", "F_prime"]
    assert len(frame) == 3


def test_case_13_derivative_identities():
    """
    Test Case 13: Exact mode, N=10, p=2, step 1e-3 around beta_2 = 0.7
    - |fd(F) - F'| <= 1e-5 and |fd(F') - F''| <= 1e-5
    - F'' >= 0 and the curve is convex
    """
    params = ModelParameters(10, ((2, 0.7),), 0.3)
    grid = 0.7 + 1e-3 * np.arange(-3, 4)
    curve = free_energy_curve(2, grid, params, "exact", Budgets(n_disorder=3, master_seed=70))
    check = derivative_identity_check(curve)
    assert check.max_first_deviation <= 1e-5
    assert check.max_second_deviation <= 1e-5
    assert check.min_second_derivative >= 0.0
    assert check.min_second_difference >= -1e-6
    assert check.passes()


def test_case_14_flat_curve():
    """
    Test Case 14: H_2 constant in sigma (N=1): F is linear, F'' = 0
    - derivative deviations vanish to floating-point tolerance
    - both sides of the secant bound are 0
    """
    budgets = Budgets(n_disorder=5, master_seed=1)
    curve = free_energy_curve(2, [0.0, 0.5, 1.0, 1.5], flat_model(), "exact", budgets)
    check = derivative_identity_check(curve)
    assert check.max_first_deviation <= 1e-9
    assert check.max_second_deviation <= 1e-12
    assert max(abs(e.mean) for e in curve.F_second) <= 1e-12

    secant = convexity_secant_bound(2, 0.5, 1.0, 0.25, flat_model(), "exact", budgets)
    assert secant.lhs == pytest.approx(0.0, abs=1e-12)
    assert secant.rhs == pytest.approx(0.0, abs=1e-9)


def test_case_15_curve_validation():
    """
    Test Case 15: Grids with fewer than 3 points or out of order raise;
    derivative checks refuse mc curves
    """
    params = ModelParameters(4, ((2, 1.0),))
    budgets = Budgets(n_disorder=2)
    with pytest.raises(ConfigError):
        free_energy_curve(2, [0.1, 0.2], params, "exact", budgets)
    with pytest.raises(ConfigError):
        free_energy_curve(2, [0.1, 0.3, 0.2], params, "exact", budgets)

    schedule = Schedule(burn_in=10, sweeps=40)
    curve = free_energy_curve(2, [0.1, 0.2, 0.3], params, "mc", Budgets(n_disorder=2, schedule=schedule))
    with pytest.raises(ConfigError):
        derivative_identity_check(curve)


def test_case_16_delta_bound():
    """
    Test Case 16: Exact mode, N=8, p=2, beta=0.5, beta'=1.0, h=0.3
    - lhs <= pair gap <= 2 sqrt(Delta/(N delta)) + 8 Delta, slack >= -1e-8
    - Delta by 16-point quadrature equals F'(beta') - F'(beta) to 1e-6
    """
    params = ModelParameters(8, ((2, 0.5),), 0.3)
    report = delta_bound_check(2, 0.5, 1.0, params, "exact", Budgets(n_disorder=3, master_seed=31))
    assert report.holds
    assert report.slack >= -1e-8
    assert report.details["jensen_slack"] >= -1e-8
    assert report.details["pair_gap_slack"] >= -1e-8
    assert report.details["delta_forms_gap"] <= 1e-6
    assert report.details["quadrature_doubling_change"] <= 1e-6
    delta = report.estimates["delta_quadrature"].mean
    assert report.rhs == pytest.approx(2 * math.sqrt(delta / (8 * 0.5)) + 8 * delta)


def test_case_17_proof_inequalities_on_a_grid():
    """
    Test Case 17: 3x3 grid of (beta, beta') in [0.2, 1.2], gamma in {0.1, 0.25}
    - delta bound and secant bound hold with slack >= -1e-8
    - quadrature and endpoint forms of Delta agree to 1e-6
    """
    params = ModelParameters(8, ((1, 0.3), (2, 0.5)), 0.3)
    budgets = Budgets(n_disorder=2, master_seed=77)
    for beta in (0.2, 0.5, 0.8):
        for width in (0.2, 0.3, 0.4):
            bound = delta_bound_check(2, beta, beta + width, params, "exact", budgets)
            assert bound.slack >= -1e-8
            assert bound.details["delta_forms_gap"] <= 1e-6
            for gamma in (0.1, 0.25):
                secant = convexity_secant_bound(2, beta, beta + width, gamma, params, "exact", budgets)
                assert secant.slack >= -1e-8
                assert secant.holds


def test_case_18_degenerate_interval_and_large_gamma():
    """
    Test Case 18: Edge intervals
    - delta = 1e-6: Delta -> 0, report stays finite and holds
    - gamma = 5: the secant bound holds with large slack
    - empty interval or non-positive gamma raises
    """
    params = ModelParameters(6, ((2, 0.5),), 0.2)
    budgets = Budgets(n_disorder=2, master_seed=5)
    narrow = delta_bound_check(2, 0.5, 0.5 + 1e-6, params, "exact", budgets)
    assert narrow.estimates["delta_quadrature"].mean < 1e-5
    assert math.isfinite(narrow.rhs)
    assert narrow.holds

    wide = convexity_secant_bound(2, 0.5, 1.0, 5.0, params, "exact", budgets)
    assert wide.slack > 0.1

    with pytest.raises(ConfigError):
        delta_bound_check(2, 1.0, 1.0, params, "exact", budgets)
    with pytest.raises(ConfigError):
        convexity_secant_bound(2, 0.5, 1.0, 0.0, params, "exact", budgets)


def test_case_19_gap_derivative():
    """
    Test Case 19: d/dx of the pair gap
    - Gibbs identity agrees with a central difference
    - |d/dx| <= 2 E<(H1 - H2)^2> <= 8 E<(H - <H>)^2>
    """
    params = ModelParameters(7, ((2, 0.6),), 0.2)
    report = gap_derivative_check(2, 0.6, params, Budgets(n_disorder=3, master_seed=19), step=1e-4)
    assert report.details["identity"] == pytest.approx(report.details["finite_difference"], abs=1e-5)
    assert report.holds


def test_case_20_integration_by_parts():
    """
    Test Case 20: E<f H_p(s1)> = beta_p N E<f (sum_l R_1l^p - n R_1,n+1^p)>
    - N=4, p=2, n=2, f = R_12^2, 200 realizations, paired difference within 3 SE
    """
    params = ModelParameters(4, ((2, 0.9),), 0.2)
    report = integration_by_parts_check(
        GGQuery(2, 2, r12_squared()), params, "exact", Budgets(n_disorder=200, master_seed=20),
    )
    assert report.estimates["difference"].deviation(0.0) <= 3.0
    assert report.holds
