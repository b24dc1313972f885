import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from momentum_lab.core import InvalidArgument, MomentumParams, Spectrum, make_rng
from momentum_lab.rate import (COMPLEX, REAL_NEG, REAL_POS, NoOptimumError, char_coeffs, global_rate,
                               local_rate, optimal_alpha, optimal_params, rate_array,
                               rate_monotonicity_breakpoint, shb_no_tradeoff_interval,
                               spectral_radius_oracle, stability_max_alpha, verify_nu_monotonicity)

KNIFE = (9 / 11) ** 2


def eig_oracle(alpha, beta, nu, lam):
    """Eigenvalues of the companion block via numpy, independent of the closed form."""
    t = np.array([[beta, (1 - beta) * lam], [-alpha * nu * beta, 1 - alpha * (1 - nu * beta) * lam]])
    return float(np.max(np.abs(np.linalg.eigvals(t))))


# -- coefficients and local rate ----------------------------------------------------


def test_char_coeffs_examples():
    c = char_coeffs(MomentumParams(0.1, 0.0, 0.0), 1.0)
    assert (c.c1, c.c2) == (pytest.approx(0.9), 0.0) and c.disc == pytest.approx(0.81)
    c = char_coeffs(MomentumParams(1.0, 0.9, 1.0), 1.0)
    assert c.c1 == pytest.approx(1.8) and c.c2 == pytest.approx(0.9) and c.disc == pytest.approx(-0.36)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(1e-4, 10), b=st.floats(0, 0.999), n=st.floats(0, 1), lam=st.floats(1e-3, 1e3))
def test_discriminant_identity(a, b, n, lam):
    c = char_coeffs(MomentumParams(a, b, n), lam)
    scale = max(1.0, c.c1 * c.c1, abs(c.c2))
    assert abs(c.disc - (c.c1 ** 2 - 4 * c.c2)) <= 1e-12 * scale


def test_zero_step_limit_of_oracle():
    for b in (0.0, 0.3, 0.99):
        assert spectral_radius_oracle(MomentumParams(1.0, b, 0.5), 3.0, alpha=0.0) == pytest.approx(1.0, abs=1e-13)


def test_gradient_descent_rate():
    r, regime = local_rate(MomentumParams(0.1, 0.0, 0.0), 1.0)
    assert r == pytest.approx(0.9, abs=1e-15) and regime == REAL_POS
    assert spectral_radius_oracle(MomentumParams(0.1, 0.0, 0.0), 1.0) == pytest.approx(0.9, abs=1e-15)


def test_knife_edge_rate_at_both_ends():
    p = MomentumParams(0.1, KNIFE, 1.0)
    for lam in (1.0, 100.0):
        assert local_rate(p, lam)[0] == pytest.approx(9 / 11, abs=1e-7)


def test_divergent_negative_branch():
    r, regime = local_rate(MomentumParams(0.3, 0.0, 0.0), 10.0)
    assert r == pytest.approx(2.0) and regime == REAL_NEG


def test_complex_regime_tag():
    r, regime = local_rate(MomentumParams(1.0, 0.9, 1.0), 1.0)
    assert regime == COMPLEX and r == pytest.approx(math.sqrt(0.9))


def test_lambda_must_be_positive():
    with pytest.raises(InvalidArgument):
        local_rate(MomentumParams(0.1, 0.5, 0.5), 0.0)


@settings(max_examples=300, deadline=None)
@given(b=st.floats(0, 0.999), n=st.floats(0, 1), lam=st.floats(1e-3, 1e3), frac=st.floats(1e-6, 1.2))
def test_closed_form_matches_numpy_eigenvalues(b, n, lam, frac):
    a = stability_max_alpha(b, n, lam) * frac
    p = MomentumParams(a, b, n)
    r = local_rate(p, lam)[0]
    # numpy's eigensolver loses accuracy near repeated roots; tolerance covers that
    assert r == pytest.approx(eig_oracle(a, b, n, lam), abs=5e-7)
    assert r == pytest.approx(spectral_radius_oracle(p, lam), abs=1e-7)


def test_vectorized_rate_matches_scalar():
    rng = make_rng(1)
    a, b, n, lam = rng.uniform(0.01, 1, 50), rng.uniform(0, 0.99, 50), rng.uniform(0, 1, 50), rng.uniform(0.1, 10, 50)
    vec = rate_array(a, b, n, lam)
    for i in range(50):
        assert vec[i] == local_rate(MomentumParams(a[i], b[i], n[i]), lam[i])[0]


# -- global rate and stability -------------------------------------------------------


def test_global_rate_knife_edge():
    rep = global_rate(MomentumParams(0.1, KNIFE, 1.0), Spectrum(1.0, 100.0))
    assert rep.rate == pytest.approx(9 / 11, abs=1e-7) and rep.stable


def test_global_rate_gd_optimum():
    rep = global_rate(MomentumParams(2 / 101, 0.0, 0.0), Spectrum(1.0, 100.0))
    assert rep.r_mu == pytest.approx(99 / 101) and rep.r_ell == pytest.approx(99 / 101)
    assert rep.rate == pytest.approx(99 / 101, abs=1e-12)


def test_global_rate_unstable():
    rep = global_rate(MomentumParams(0.021, 0.0, 0.0), Spectrum(1.0, 100.0))
    assert rep.rate == pytest.approx(1.1) and not rep.stable


def test_rate_report_dict_keys():
    p = MomentumParams(0.1, 0.5, 0.5)
    d = global_rate(p, Spectrum(1.0, 10.0)).as_dict(p)
    assert list(d) == ["alpha", "beta", "nu", "r_mu", "r_ell", "rate", "stable", "regime_mu", "regime_ell"]


@pytest.mark.parametrize("beta,nu,ell,expected", [(0, 0, 1, 2.0), (0.9, 1, 10, 3.8), (0.5, 0.5, 2, 1.5)])
def test_stability_bound_values(beta, nu, ell, expected):
    assert stability_max_alpha(beta, nu, ell) == pytest.approx(expected, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(b=st.floats(0, 0.999), n=st.floats(0, 1), log_ell=st.floats(-2, 3))
def test_stability_bound_is_sharp(b, n, log_ell):
    ell = 10.0 ** log_ell
    am = stability_max_alpha(b, n, ell)
    assert local_rate(MomentumParams(am * (1 - 1e-6), b, n), ell)[0] < 1.0
    assert local_rate(MomentumParams(am * (1 + 1e-6), b, n), ell)[0] >= 1.0


@pytest.mark.parametrize("a,b,n,expected", [(1.0, 0.0, 0.7, 1.0), (0.1, 0.81, 1.0, 190.0), (0.5, 0.25, 0.25, 8 / 3)])
def test_breakpoint_values(a, b, n, expected):
    assert rate_monotonicity_breakpoint(MomentumParams(a, b, n)) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(1e-3, 1.0), b=st.floats(0, 0.99), n=st.floats(0, 1))
def test_rate_is_unimodal_around_breakpoint(a, b, n):
    p = MomentumParams(a, b, n)
    bp = rate_monotonicity_breakpoint(p)
    left = rate_array(a, b, n, np.geomspace(bp * 1e-3, bp, 200))
    right = rate_array(a, b, n, np.geomspace(bp, bp * 1e3, 200))
    assert np.all(np.diff(left) <= 1e-12)
    assert np.all(np.diff(right) >= -1e-12)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(1e-3, 1.0), b=st.floats(0, 0.99), n=st.floats(0, 1), log_mu=st.floats(-2, 1),
       log_k=st.floats(0, 3))
def test_interior_eigenvalues_never_dominate(a, b, n, log_mu, log_k):
    mu = 10.0 ** log_mu
    ell = mu * 10.0 ** log_k
    rep = global_rate(MomentumParams(a, b, n), Spectrum(mu, ell))
    inner = rate_array(a, b, n, np.linspace(mu, ell, 257))
    assert np.all(inner <= rep.rate + 1e-12)


def test_rate_depends_on_alpha_lambda_product():
    p1 = local_rate(MomentumParams(0.2, 0.7, 0.4), 5.0)[0]
    p2 = local_rate(MomentumParams(2.0, 0.7, 0.4), 0.5)[0]
    assert p1 == pytest.approx(p2, abs=1e-15)


# -- optimal parameters ---------------------------------------------------------------


def test_optimal_alpha_gradient_descent():
    # the rate has slope ell in alpha at the balance point, so tighten the bracket
    a = optimal_alpha(0.0, 0.0, Spectrum(1.0, 100.0), tol=1e-13)
    assert a == pytest.approx(2 / 101, rel=1e-12)
    rep = global_rate(MomentumParams(a, 0, 0), Spectrum(1.0, 100.0))
    assert rep.rate == pytest.approx(99 / 101, abs=1e-8)


def test_optimal_alpha_knife_edge():
    assert optimal_alpha(KNIFE, 1.0, Spectrum(1.0, 100.0)) == pytest.approx(0.1, rel=1e-7)


def test_optimal_alpha_smallest_on_plateau():
    a = optimal_alpha(0.9, 1.0, Spectrum(1.0, 10.0))
    expected = (1 - math.sqrt(0.9)) / (1 + math.sqrt(0.9))
    assert a == pytest.approx(expected, rel=1e-7)
    assert a == pytest.approx(0.0263340, abs=1e-7)


def test_optimal_alpha_balances_endpoints():
    spec = Spectrum(1.0, 50.0)
    for b, n in [(0.3, 0.2), (0.6, 0.7), (0.95, 0.5)]:
        a = optimal_alpha(b, n, spec)
        rep = global_rate(MomentumParams(a, b, n), spec)
        assert abs(rep.r_mu - rep.r_ell) < 1e-6
        assert a < stability_max_alpha(b, n, spec.ell)


def test_optimal_alpha_single_eigenvalue():
    a = optimal_alpha(0.0, 1.0, Spectrum(2.0, 2.0))
    assert a == pytest.approx(0.5)


def test_optimal_alpha_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        optimal_alpha(1.0, 0.5, Spectrum(1, 10))


def test_no_optimum_error_exists():
    assert issubclass(NoOptimumError, RuntimeError)


@pytest.mark.parametrize("kappa", [10.0, 100.0, 1000.0])
def test_optimal_heavy_ball_rate(kappa):
    r = optimal_params(1.0, kappa)
    sk = math.sqrt(kappa)
    assert r.rate == pytest.approx((sk - 1) / (sk + 1), abs=1e-4)
    assert abs(r.beta - ((sk - 1) / (sk + 1)) ** 2) <= 1.0 / 999 * (1 - 1e-5) + 1e-12


def test_optimal_gradient_descent_is_best_at_nu_zero():
    r = optimal_params(0.0, 100.0)
    assert r.rate == pytest.approx(99 / 101, abs=1e-8) and r.beta == 0.0


def test_optimal_with_unit_condition_number():
    r = optimal_params(1.0, 1.0)
    assert r.rate == 0.0 and r.beta == 0.0 and r.alpha == pytest.approx(1.0)


@pytest.mark.parametrize("nu", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("c", [0.01, 10.0])
def test_kappa_invariance(nu, c):
    a = optimal_params(nu, 30.0)
    b = optimal_params(nu, 30.0, mu=c)
    assert abs(a.rate - b.rate) < 1e-6
    assert b.alpha * c == pytest.approx(a.alpha, rel=1e-6)


def test_grid_only_result_is_not_better_than_refined():
    a = optimal_params(0.5, 100.0, refine=False)
    b = optimal_params(0.5, 100.0)
    assert b.rate <= a.rate


def test_monotonicity_unit_kappa():
    rep = verify_nu_monotonicity([1.0], 20, stride=5)
    assert rep.passed and rep.worst_violation == 0.0


def test_monotonicity_requires_grid_larger_than_stride():
    with pytest.raises(InvalidArgument):
        verify_nu_monotonicity([10.0], 10, stride=10)


def test_monotonicity_small_grid():
    rep = verify_nu_monotonicity([10.0], 21, stride=5, beta_grid_size=200)
    assert rep.passed


# -- no-trade-off interval -----------------------------------------------------------


def test_no_tradeoff_interval_closed_form():
    lo, hi = shb_no_tradeoff_interval(0.9, Spectrum(1.0, 10.0))
    sb = math.sqrt(0.9)
    assert lo == pytest.approx((1 - sb) / (1 + sb), rel=1e-14) and lo == pytest.approx(0.0263340, abs=1e-7)
    assert hi == pytest.approx((1 + sb) / (10 * (1 - sb)), rel=1e-14)


def test_no_tradeoff_interval_matches_complex_region():
    # independent check: the region where both endpoint discriminants are negative, found by dense scan
    spec = Spectrum(1.0, 10.0)
    lo, hi = shb_no_tradeoff_interval(0.9, spec)
    alphas = np.linspace(lo * 0.5, hi * 1.02, 20001)
    cplx = [all(char_coeffs(MomentumParams(a, 0.9, 1.0), lam).disc < 0 for lam in (1.0, 10.0)) for a in alphas]
    inside = alphas[np.array(cplx)]
    step = alphas[1] - alphas[0]
    assert abs(inside.min() - lo) <= step and abs(inside.max() - hi) <= step


def test_no_tradeoff_plateau_rate():
    spec = Spectrum(1.0, 10.0)
    for a in (0.1, 0.5):
        assert global_rate(MomentumParams(a, 0.9, 1.0), spec).rate == pytest.approx(math.sqrt(0.9), abs=1e-12)


def test_no_tradeoff_knife_edge_degenerates():
    lo, hi = shb_no_tradeoff_interval(KNIFE, Spectrum(1.0, 100.0))
    assert lo == pytest.approx(0.1, rel=1e-12) and hi == pytest.approx(0.1, rel=1e-12)


def test_no_tradeoff_absent_without_momentum():
    assert shb_no_tradeoff_interval(0.0, Spectrum(1.0, 10.0)) is None
    assert shb_no_tradeoff_interval(0.1, Spectrum(1.0, 1000.0)) is None
