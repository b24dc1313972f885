import math

import numpy as np
import pytest

from momentum_lab.core import (InvalidArgument, MomentumParams, QuadraticProblem, Spectrum, benchmark_problem,
                               make_rng, random_spd_problem)
from momentum_lab.dynamics import BetaToOne, BetaToZero, Constant, OptimizerState, qhm_step
from momentum_lab.rate import global_rate
from momentum_lab.sim import (fit_rate, parse_stages, run_asymptotic, run_constant_and_drop, run_deterministic,
                              run_stochastic)
from momentum_lab.stationary import stationary_report

KNIFE = (9 / 11) ** 2


def unit_problem():
    return QuadraticProblem([[1.0]], [0.0], [[0.0]])


def test_gradient_descent_contracts_exactly():
    st = run_deterministic(unit_problem(), MomentumParams(0.1, 0.0, 0.0), [1.0], 200)
    k = np.arange(len(st.distances))
    assert np.allclose(st.distances, 0.9 ** k, rtol=1e-12, atol=0)
    assert st.measured_rate == pytest.approx(0.9, abs=1e-9)


def test_start_at_optimum_has_no_rate():
    st = run_deterministic(unit_problem(), MomentumParams(0.1, 0.5, 0.5), [0.0], 100)
    assert np.all(st.distances == 0.0) and st.measured_rate is None
    assert any("undefined" in w for w in st.warnings)


def test_kernel_matches_reference_update():
    prob = random_spd_problem(3, Spectrum(0.5, 4.0), 0.0, 2)
    p = MomentumParams(0.2, 0.7, 0.6)
    x0 = np.array([1.0, -2.0, 0.5])
    st = run_deterministic(prob, p, x0, 50)
    s = OptimizerState.initial(x0)
    for _ in range(50):
        s = qhm_step(s, prob.grad(s.x), p)
    assert np.allclose(st.x, s.x, rtol=1e-12, atol=1e-14)


def test_knife_edge_rate_band():
    prob = random_spd_problem(10, Spectrum(1.0, 100.0), 0.0, 4)
    x0 = make_rng(1).standard_normal(10)
    st = run_deterministic(prob, MomentumParams(0.1, KNIFE, 1.0), x0, 5000)
    assert 0.80 <= st.measured_rate <= 0.83


@pytest.mark.parametrize("params", [MomentumParams(0.05, 0.5, 0.5), MomentumParams(0.15, 0.9, 1.0),
                                    MomentumParams(0.1, 0.0, 0.0), MomentumParams(0.3, 0.8, 0.3)])
def test_measured_rate_is_within_band(params):
    prob = random_spd_problem(6, Spectrum(0.2, 5.0), 0.0, 8)
    x0 = make_rng(2).standard_normal(6)
    r = global_rate(params, prob.spectrum).rate
    st = run_deterministic(prob, params, x0, 3000)
    assert r - 0.05 <= st.measured_rate <= r + 0.01


def test_divergence_is_reported():
    st = run_deterministic(unit_problem(), MomentumParams(2.5, 0.0, 0.0), [1.0], 1000)
    assert st.diverged and st.divergence_step is not None and st.divergence_step < 100
    assert st.measured_rate is None
    assert any("diverged" in w for w in st.warnings)


def test_fit_rate_guards():
    assert fit_rate(np.array([1.0, 0.0, 0.0])) is None
    assert fit_rate(0.5 ** np.arange(20)) == pytest.approx(0.5, rel=1e-12)


def test_zero_noise_stochastic_run_decays():
    prob = QuadraticProblem(np.diag([0.1, 10.0]), np.zeros(2), np.zeros((2, 2)))
    st = run_stochastic(prob, MomentumParams(0.1, 0.9, 1.0), [1.0, 1.0], 4000, burn_in=3000)
    assert st.mean_loss_window < 1e-20 and np.max(np.abs(st.empirical_cov)) < 1e-20


def test_stochastic_run_is_seeded():
    prob = benchmark_problem()
    a = run_stochastic(prob, MomentumParams(0.1, 0.9, 1.0), np.zeros(2), 1000, seed=5)
    b = run_stochastic(prob, MomentumParams(0.1, 0.9, 1.0), np.zeros(2), 1000, seed=5)
    c = run_stochastic(prob, MomentumParams(0.1, 0.9, 1.0), np.zeros(2), 1000, seed=6)
    assert a.mean_loss_window == b.mean_loss_window and a.x.tobytes() == b.x.tobytes()
    assert a.mean_loss_window != c.mean_loss_window
    assert math.isfinite(a.mean_loss_window)


def test_empirical_covariance_is_symmetric_psd():
    st = run_stochastic(benchmark_problem(), MomentumParams(0.1, 0.5, 0.5), np.zeros(2), 20000, seed=1)
    assert np.array_equal(st.empirical_cov, st.empirical_cov.T)
    assert np.all(np.linalg.eigvalsh(st.empirical_cov) >= -1e-15)
    assert st.iterates_kept == 10000


def test_burn_in_validation():
    with pytest.raises(InvalidArgument):
        run_stochastic(benchmark_problem(), MomentumParams(0.1, 0.5, 0.5), np.zeros(2), 100, burn_in=100)


def test_monte_carlo_matches_exact_trace():
    prob = benchmark_problem()
    p = MomentumParams(0.1, 0.9, 1.0)
    exact = stationary_report(p, prob).tr_a_sigma_x
    st = run_stochastic(prob, p, np.zeros(2), 1_100_000, burn_in=100_000, seed=0)
    assert abs(st.tr_a_cov - exact) / exact < 0.05


def test_asymptotic_run_warns_on_mislabeled_schedule():
    res = run_asymptotic(benchmark_problem(), Constant(MomentumParams(0.1, 0.5, 0.5)), np.ones(2), 2000,
                         regime="vanishing_momentum")
    assert res.warnings and "vanishing_momentum" in res.warnings[0]
    assert len(res.grad_norm_min_curve) >= 2000


def test_asymptotic_curve_is_running_minimum():
    res = run_asymptotic(benchmark_problem(), BetaToZero(1.0, 0.5, 0.99), np.ones(2), 5000, seed=1)
    assert np.all(np.diff(res.grad_norm_min_curve) <= 0)
    assert res.reduction > 1.0 and not res.warnings


def test_asymptotic_truncated_noise_needs_bound():
    with pytest.raises(InvalidArgument):
        run_asymptotic(benchmark_problem(), BetaToOne(0.9, 0.6), np.ones(2), 100, noise="truncated")


def test_single_drop_stage_equals_stochastic_run():
    prob = benchmark_problem()
    p = MomentumParams(0.5, 0.9, 1.0)
    res = run_constant_and_drop(prob, [(p, 4000)], np.ones(2), seed=3)
    st = run_stochastic(prob, p, np.ones(2), 4000, burn_in=2000, seed=3)
    assert res[0].stats.mean_loss_window == st.mean_loss_window


def test_drop_lowers_loss_and_keeps_rate_inside_plateau():
    prob = benchmark_problem()
    res = run_constant_and_drop(prob, [(MomentumParams(2.8, 0.9, 1.0), 20000),
                                       (MomentumParams(0.28, 0.9, 1.0), 20000)], np.ones(2), seed=0)
    assert res[1].stats.mean_loss_window < res[0].stats.mean_loss_window
    for r in res:
        assert r.deterministic_rate == pytest.approx(math.sqrt(0.9), abs=0.01)


def test_drop_rejects_unstable_stage():
    with pytest.raises(InvalidArgument, match="stage 1"):
        run_constant_and_drop(benchmark_problem(), [(MomentumParams(0.1, 0.9, 1.0), 100),
                                                     (MomentumParams(5.0, 0.9, 1.0), 100)], np.ones(2))


def test_parse_stages():
    st = parse_stages("0.5:10, 0.05:20", 0.9, 1.0)
    assert [(p.alpha, s) for p, s in st] == [(0.5, 10), (0.05, 20)]
    with pytest.raises(InvalidArgument):
        parse_stages("0.5-10", 0.9, 1.0)
