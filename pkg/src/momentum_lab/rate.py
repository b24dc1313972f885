"""Local convergence rate and stability region of constant-parameter QHM.

On a quadratic with Hessian eigenvalue ``lam`` the deterministic dynamics
reduce to the 2x2 companion block

    T(lam) = [[beta,            (1 - beta) lam        ],
              [-alpha nu beta,  1 - alpha (1 - nu beta) lam]]

whose characteristic polynomial is ``t^2 - C1 t + C2``.  The global rate is
the largest spectral radius over the spectrum, attained at ``mu`` or ``L``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .core import InvalidArgument, MomentumParams, Spectrum

REAL_POS = "real-positive-C1"
REAL_NEG = "real-negative-C1"
COMPLEX = "complex"

# f(alpha) = r(mu) - r(L) counts as "not positive" below this level
BALANCE_EPS = 1e-13
SCAN_POINTS = 64


class NoOptimumError(RuntimeError):
    pass


@dataclass(frozen=True)
class CharCoeffs:
    c1: float
    c2: float
    disc: float


@dataclass(frozen=True)
class RateReport:
    r_mu: float
    r_ell: float
    regime_mu: str
    regime_ell: str
    rate: float
    stable: bool

    def as_dict(self, params: MomentumParams | None = None) -> dict:
        d = {}
        if params is not None:
            d.update(params.as_dict())
        d.update(r_mu=self.r_mu, r_ell=self.r_ell, rate=self.rate, stable=self.stable,
                 regime_mu=self.regime_mu, regime_ell=self.regime_ell)
        return d


# -- vectorized kernels ------------------------------------------------------


def _coeffs(alpha, beta, nu, lam):
    al = alpha * lam
    c1 = 1.0 - al + al * nu * beta + beta
    c2 = beta * (1.0 - al + al * nu)
    # C1^2 - 4 C2 in factored form: (1 - nu beta)^2 (al - u_lo)(al - u_hi).
    # Avoids the cancellation near a double root that costs sqrt(eps) in r.
    nb = nu * beta
    s = np.sqrt(nb)
    q = 1.0 - nb
    with np.errstate(divide="ignore", invalid="ignore"):
        u_lo = (1.0 - beta) * (1.0 - s) ** 2 / (q * q)
        u_hi = (1.0 - beta) * (1.0 + s) ** 2 / (q * q)
        disc = np.where(q > 0.0, (q * q) * (al - u_lo) * (al - u_hi), c1 * c1 - 4.0 * c2)
    if np.ndim(disc) == 0:
        disc = float(disc)
    return c1, c2, disc


def rate_array(alpha, beta, nu, lam) -> np.ndarray:
    """Broadcasting version of :func:`local_rate` (rate only)."""
    c1, c2, disc = _coeffs(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float),
                           np.asarray(nu, dtype=float), np.asarray(lam, dtype=float))
    real = 0.5 * (np.sqrt(np.maximum(disc, 0.0)) + np.abs(c1))
    cplx = np.sqrt(np.maximum(c2, 0.0))
    return np.where(disc >= 0.0, real, cplx)


def max_alpha_array(beta, nu, ell):
    beta = np.asarray(beta, dtype=float)
    return 2.0 * (1.0 + beta) / (ell * (1.0 + beta * (1.0 - 2.0 * nu)))


# -- scalar API --------------------------------------------------------------


def _check_lambda(lam: float):
    if not lam > 0:
        raise InvalidArgument(f"lambda must be > 0, got {lam}")


def char_coeffs(params: MomentumParams, lam: float) -> CharCoeffs:
    _check_lambda(lam)
    return CharCoeffs(*(float(v) for v in _coeffs(params.alpha, params.beta, params.nu, lam)))


def _local_rate(alpha, beta, nu, lam):
    c1, c2, disc = _coeffs(alpha, beta, nu, lam)
    if disc >= 0.0:
        if c1 >= 0.0:
            return 0.5 * (math.sqrt(disc) + c1), REAL_POS
        return 0.5 * (math.sqrt(disc) - c1), REAL_NEG
    return math.sqrt(c2), COMPLEX


def local_rate(params: MomentumParams, lam: float) -> tuple[float, str]:
    """Spectral radius of the companion block at eigenvalue ``lam`` and its regime."""
    _check_lambda(lam)
    return _local_rate(params.alpha, params.beta, params.nu, float(lam))


def companion_block(alpha: float, beta: float, nu: float, lam: float) -> np.ndarray:
    return np.array([[beta, (1.0 - beta) * lam],
                     [-alpha * nu * beta, 1.0 - alpha * (1.0 - nu * beta) * lam]])


def spectral_radius_oracle(params: MomentumParams | None, lam: float, *, alpha: float | None = None) -> float:
    """Max eigenvalue modulus of the explicit 2x2 block, via the complex quadratic formula.

    ``alpha`` overrides ``params.alpha`` (allows the ``alpha = 0`` probe).
    """
    _check_lambda(lam)
    a = params.alpha if alpha is None else alpha
    t = companion_block(a, params.beta, params.nu, lam)
    tr = t[0, 0] + t[1, 1]
    det = t[0, 0] * t[1, 1] - t[0, 1] * t[1, 0]
    root = cmath.sqrt(complex(tr * tr - 4.0 * det))
    return max(abs((tr + root) / 2.0), abs((tr - root) / 2.0))


def global_rate(params: MomentumParams, spectrum: Spectrum) -> RateReport:
    r_mu, reg_mu = local_rate(params, spectrum.mu)
    r_ell, reg_ell = local_rate(params, spectrum.ell)
    rate = max(r_mu, r_ell)
    # endpoint dominance: interior eigenvalues never exceed the endpoint max
    assert _interior_dominated(params, spectrum, rate), "interior eigenvalue exceeds endpoint rate"
    return RateReport(r_mu, r_ell, reg_mu, reg_ell, rate, rate < 1.0)


def _interior_dominated(params, spectrum, rate, samples=32, slack=1e-12):
    if spectrum.mu == spectrum.ell:
        return True
    lam = np.geomspace(spectrum.mu, spectrum.ell, samples + 2)[1:-1]
    r = rate_array(params.alpha, params.beta, params.nu, lam)
    return bool(np.all(r <= rate + slack * max(1.0, rate)))


def stability_max_alpha(beta: float, nu: float, ell: float) -> float:
    """Open upper bound on the step size for a stable iteration."""
    if not 0.0 <= beta < 1.0 or not 0.0 <= nu <= 1.0 or not ell > 0:
        raise InvalidArgument("need 0 <= beta < 1, 0 <= nu <= 1, ell > 0")
    return float(max_alpha_array(beta, nu, ell))


def rate_monotonicity_breakpoint(params: MomentumParams) -> float:
    """Eigenvalue where ``lam -> r(lam)`` switches from non-increasing to non-decreasing."""
    nb = params.nu * params.beta
    if not nb < 1.0:
        raise InvalidArgument("need nu * beta < 1")
    return (1.0 - params.beta) / (params.alpha * (1.0 - math.sqrt(nb)) ** 2)


def shb_no_tradeoff_interval(beta: float, spectrum: Spectrum) -> tuple[float, float] | None:
    """Step sizes where heavy ball (``nu = 1``) has complex eigenvalues at both ``mu`` and ``L``.

    On this interval the global rate is ``sqrt(beta)`` independently of
    ``alpha``.  Returns ``None`` when it is empty.
    """
    if not 0.0 <= beta < 1.0:
        raise InvalidArgument("need 0 <= beta < 1")
    if beta == 0.0:
        return None
    sb = math.sqrt(beta)
    lo = (1.0 - sb) / (spectrum.mu * (1.0 + sb))
    hi = (1.0 + sb) / (spectrum.ell * (1.0 - sb))
    if lo > hi * (1.0 + 1e-12):
        return None
    return lo, max(lo, hi)


# -- optimal parameters --------------------------------------------------------


def _optimal_alpha_batch(betas, nu, mu, ell, tol):
    """Smallest alpha with r(mu) <= r(L) for every beta in ``betas``.

    Returns ``(alpha, ok)``; ``ok`` is False where no balance point exists.
    """
    betas = np.asarray(betas, dtype=float)
    amax = max_alpha_array(betas, nu, ell)
    if mu == ell:
        # single eigenvalue: minimise r directly, at the monotonicity breakpoint
        alpha = (1.0 - betas) / (mu * (1.0 - np.sqrt(nu * betas)) ** 2)
        return alpha, np.ones(betas.shape, dtype=bool)

    def f(alpha):
        b = betas[..., None] if np.ndim(alpha) > np.ndim(betas) else betas
        return rate_array(alpha, b, nu, mu) - rate_array(alpha, b, nu, ell)

    frac = np.geomspace(1e-8, 1.0 - 1e-12, SCAN_POINTS)
    grid = amax[..., None] * frac
    fv = f(grid)
    neg = fv <= BALANCE_EPS
    # extend below the scan while the first point is already balanced (plateaus)
    lo_first = grid[..., 0].copy()
    stuck = neg[..., 0]
    for _ in range(40):
        if not stuck.any():
            break
        lo_first = np.where(stuck, lo_first * 1e-4, lo_first)
        stuck = stuck & (f(lo_first) <= BALANCE_EPS) & (lo_first > 1e-300)
    ok = neg.any(axis=-1) & ~stuck
    first = np.argmax(neg, axis=-1)
    hi = np.take_along_axis(grid, first[..., None], axis=-1)[..., 0]
    lo = np.where(first > 0,
                  np.take_along_axis(grid, np.maximum(first - 1, 0)[..., None], axis=-1)[..., 0],
                  lo_first)
    for _ in range(200):
        if np.all(hi - lo <= tol * hi):
            break
        mid = 0.5 * (lo + hi)
        pos = f(mid) > BALANCE_EPS
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return hi, ok


def _rate_at(alpha, betas, nu, mu, ell):
    return np.maximum(rate_array(alpha, betas, nu, mu), rate_array(alpha, betas, nu, ell))


def optimal_alpha(beta: float, nu: float, spectrum: Spectrum, tol: float = 1e-8) -> float:
    """Step size balancing the rates at ``mu`` and ``L`` for fixed ``(beta, nu)``.

    Bisection on ``r(mu) - r(L)`` after a geometric bracketing scan.  Where a
    whole interval balances (heavy-ball plateau) the smallest step size is
    returned.  ``tol`` is the relative bracket width at termination.
    """
    if not 0.0 <= beta < 1.0 or not 0.0 <= nu <= 1.0:
        raise InvalidArgument("need 0 <= beta < 1 and 0 <= nu <= 1")
    alpha, ok = _optimal_alpha_batch(np.array([beta]), nu, spectrum.mu, spectrum.ell, tol)
    if not ok[0]:
        raise NoOptimumError(f"no balance point for beta={beta}, nu={nu}, spectrum={spectrum}")
    return float(alpha[0])


@dataclass(frozen=True)
class OptimalParams:
    alpha: float
    beta: float
    rate: float
    nu: float
    kappa: float


def beta_grid(size: int) -> np.ndarray:
    return np.linspace(0.0, 1.0 - 1e-5, int(size))


def optimal_params(nu: float, kappa: float, beta_grid_size: int = 1000, *, mu: float = 1.0,
                   refine: bool = True, tol: float = 1e-8) -> OptimalParams:
    """Grid search over beta of the balanced-step-size rate, with ``mu = 1, L = kappa`` by default.

    Ties go to the smallest beta index.  With ``refine`` the minimiser is
    polished by a bounded scalar search between its grid neighbours and kept
    only if it strictly improves the rate.
    """
    if not kappa >= 1:
        raise InvalidArgument("kappa must be >= 1")
    if not 0.0 <= nu <= 1.0:
        raise InvalidArgument("nu must lie in [0, 1]")
    ell = mu * kappa
    betas = beta_grid(beta_grid_size)
    alphas, ok = _optimal_alpha_batch(betas, nu, mu, ell, tol)
    rates = np.where(ok, _rate_at(alphas, betas, nu, mu, ell), np.inf)
    best = float(rates.min())
    if not np.isfinite(best):
        raise NoOptimumError(f"no feasible beta for nu={nu}, kappa={kappa}")
    i = int(np.flatnonzero(rates <= best + 1e-12 * max(best, 1e-300))[0]) if best > 0 else int(np.argmin(rates))
    result = OptimalParams(float(alphas[i]), float(betas[i]), float(rates[i]), float(nu), float(kappa))
    if not refine or best == 0.0:
        return result

    def objective(b):
        a, good = _optimal_alpha_batch(np.array([b]), nu, mu, ell, tol)
        return float(_rate_at(a, np.array([b]), nu, mu, ell)[0]) if good[0] else np.inf

    lo = betas[max(i - 1, 0)]
    hi = betas[min(i + 1, len(betas) - 1)]
    if hi > lo:
        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 200})
        if res.fun < result.rate - 1e-12:
            b = float(res.x)
            a = float(_optimal_alpha_batch(np.array([b]), nu, mu, ell, tol)[0][0])
            result = OptimalParams(a, b, float(res.fun), float(nu), float(kappa))
    return result


@dataclass
class MonotonicityReport:
    passed: bool
    worst_violation: float
    rates: dict


def nu_grid(size: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, int(size))


def verify_nu_monotonicity(kappa_samples, nu_grid_size: int, stride: int = 10, tol: float = 1e-3,
                           beta_grid_size: int = 1000, refine: bool = True) -> MonotonicityReport:
    """Check ``R*(nu_{i+stride}) - R*(nu_i) < tol`` along a uniform nu grid for each kappa.

    ``worst_violation`` is the largest observed increase (0 when the optimal
    rate never increases with nu).
    """
    if nu_grid_size <= stride:
        raise InvalidArgument("nu_grid_size must exceed stride")
    nus = nu_grid(nu_grid_size)
    worst = 0.0
    rates = {}
    for kappa in kappa_samples:
        r = np.array([optimal_params(n, kappa, beta_grid_size, refine=refine).rate for n in nus])
        rates[float(kappa)] = r
        worst = max(worst, float(np.max(r[stride:] - r[:-stride])))
    return MonotonicityReport(worst < tol, max(worst, 0.0), rates)
