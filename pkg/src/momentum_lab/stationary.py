"""Stationary covariance of constant-parameter QHM under additive gradient noise.

The augmented state ``z = [d_{k-1}; x_k - x*]`` obeys ``z+ = T z + S xi``, so
its stationary covariance solves the discrete Lyapunov equation
``Sigma_z = T Sigma_z T^T + S Sigma_xi S^T``.  The exact solve is the ground
truth for the small-step Taylor predictions of ``tr(A Sigma_x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import InvalidArgument, MomentumParams, QuadraticProblem, symmetrize

KRON_MAX_STATE = 40  # direct vectorized solve when 2n <= this
DOUBLING_MAX_ITERS = 200
DEGENERATE_TRACE = 1e-15
# rho(T) this close to 1 is treated as unstable: the solve is hopelessly ill-conditioned there
STABILITY_MARGIN = 1e-12


class UnstableSystemError(RuntimeError):
    """Spectral radius of the transition matrix is >= 1; no stationary covariance exists."""


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    t_matrix: np.ndarray
    s_matrix: np.ndarray
    params: MomentumParams
    curvature: np.ndarray

    @property
    def n(self) -> int:
        return self.curvature.shape[0]

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.t_matrix))))


def build_system(params: MomentumParams, problem_or_curvature) -> AugmentedSystem:
    a = problem_or_curvature.curvature if isinstance(problem_or_curvature, QuadraticProblem) \
        else np.atleast_2d(np.asarray(problem_or_curvature, dtype=float))
    n = a.shape[0]
    al, b, nu = params.alpha, params.beta, params.nu
    eye = np.eye(n)
    t = np.block([[b * eye, (1.0 - b) * a],
                  [-al * nu * b * eye, eye - al * (1.0 - nu * b) * a]])
    s = np.vstack([(1.0 - b) * eye, -al * (1.0 - nu * b) * eye])
    return AugmentedSystem(t, s, params, a)


@dataclass
class StationaryReport:
    sigma_z: np.ndarray
    residual: float
    n: int
    curvature: np.ndarray = field(repr=False)
    predictions: dict = field(default_factory=dict)

    @property
    def sigma_d(self) -> np.ndarray:
        return self.sigma_z[: self.n, : self.n]

    @property
    def sigma_dx(self) -> np.ndarray:
        return self.sigma_z[: self.n, self.n:]

    @property
    def sigma_xd(self) -> np.ndarray:
        return self.sigma_z[self.n:, : self.n]

    @property
    def sigma_x(self) -> np.ndarray:
        return self.sigma_z[self.n:, self.n:]

    @property
    def tr_a_sigma_x(self) -> float:
        return float(np.trace(self.curvature @ self.sigma_x))


def lyapunov_residual(t: np.ndarray, sigma: np.ndarray, q: np.ndarray) -> float:
    return float(np.max(np.abs(sigma - t @ sigma @ t.T - q)))


def _kron_solve(t, q):
    m = t.shape[0]
    mat = np.eye(m * m) - np.kron(t, t)
    lu = lu_factor(mat)
    rhs = q.reshape(-1)
    x = lu_solve(lu, rhs)
    for _ in range(3):  # iterative refinement
        r = rhs - mat @ x
        if np.max(np.abs(r)) == 0.0:
            break
        x = x + lu_solve(lu, r)
    return x.reshape(m, m)


def _doubling_solve(t, q, tol):
    # Smith doubling: X = sum_k T^k Q T^k^T with squared powers per sweep
    x, a = q.copy(), t.copy()
    for _ in range(DOUBLING_MAX_ITERS):
        inc = a @ x @ a.T
        x = x + inc
        a = a @ a
        if np.max(np.abs(inc)) <= tol * 1e-3 * max(1.0, np.max(np.abs(x))):
            break
    return x


def lyapunov_exact(system: AugmentedSystem, noise_cov, tol: float = 1e-12) -> StationaryReport:
    """Solve ``Sigma_z = T Sigma_z T^T + S Sigma_xi S^T`` exactly.

    Raises :class:`UnstableSystemError` when ``rho(T) >= 1``.
    """
    rho = system.spectral_radius()
    if not rho < 1.0 - STABILITY_MARGIN:
        raise UnstableSystemError(f"spectral radius {rho:.9g} >= 1")
    sig = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    if sig.shape != (system.n, system.n):
        raise InvalidArgument("noise_cov shape does not match the system")
    t, s = system.t_matrix, system.s_matrix
    q = symmetrize(s @ sig @ s.T)
    if t.shape[0] <= KRON_MAX_STATE:
        sigma = _kron_solve(t, q)
    else:
        sigma = _doubling_solve(t, q, tol)
    sigma = symmetrize(sigma)
    return StationaryReport(sigma, lyapunov_residual(t, sigma, q), system.n, system.curvature)


def stationary_report(params: MomentumParams, problem: QuadraticProblem) -> StationaryReport:
    """Exact solve plus both Taylor predictions stored in ``predictions``."""
    rep = lyapunov_exact(build_system(params, problem), problem.noise_cov)
    first = predict_first_order(params, problem, rep)
    rep.predictions = {
        "first_order_matrix_residual": first["residual_norm"],
        "first_order_trace": predict_tr_first_order(params, problem),
        "second_order_trace": predict_tr_second_order(params, problem),
    }
    return rep


def predict_first_order(params: MomentumParams, problem: QuadraticProblem, report: StationaryReport) -> dict:
    """Residual ``A Sigma_x + Sigma_x A - alpha Sigma_xi`` of the leading-order relation; O(alpha^2)."""
    a, sx = problem.curvature, report.sigma_x
    res = a @ sx + sx @ a - params.alpha * problem.noise_cov
    return {"residual_matrix": res, "residual_norm": float(np.max(np.abs(res)))}


def first_order_residual_main_text(params: MomentumParams, problem: QuadraticProblem,
                                   report: StationaryReport) -> float:
    """Max-abs residual of the alternative ``alpha A Sigma_xi`` right-hand side (kept for adjudication)."""
    a, sx = problem.curvature, report.sigma_x
    return float(np.max(np.abs(a @ sx + sx @ a - params.alpha * a @ problem.noise_cov)))


def predict_tr_first_order(params: MomentumParams, problem: QuadraticProblem) -> float:
    return 0.5 * params.alpha * float(np.trace(problem.noise_cov))


def second_order_coefficient(beta: float, nu: float) -> float:
    nb = nu * beta
    return 1.0 + (2.0 * nb / (1.0 - beta)) * (2.0 * nb / (1.0 + beta) - 1.0)


def predict_tr_second_order(params: MomentumParams, problem: QuadraticProblem) -> float:
    """Two-term small-step expansion of ``tr(A Sigma_x)``."""
    al = params.alpha
    return (0.5 * al * float(np.trace(problem.noise_cov))
            + 0.25 * al * al * second_order_coefficient(params.beta, params.nu)
            * float(np.trace(problem.curvature @ problem.noise_cov)))


def optimal_nu_prediction(beta: float) -> float:
    """ν minimising the second-order coefficient for fixed β."""
    if not 0.0 <= beta < 1.0:
        raise InvalidArgument("beta must lie in [0, 1)")
    if beta >= 1.0 / 3.0:
        return (1.0 + beta) / (4.0 * beta)
    return 1.0


def block_identity_residual(params: MomentumParams, report: StationaryReport) -> float:
    """Max-abs of ``c Sigma_d + Sigma_xd + Sigma_dx`` with ``c = alpha(1+beta-2 nu beta)/(1-beta)``."""
    b, nu = params.beta, params.nu
    c = params.alpha * (1.0 + b - 2.0 * nu * b) / (1.0 - b)
    return float(np.max(np.abs(c * report.sigma_d + report.sigma_xd + report.sigma_dx)))


# -- error map -----------------------------------------------------------------

ERROR_MAP_HEADER = ("alpha", "beta", "nu", "tr_exact", "tr_pred1", "tr_pred2", "rel_err", "stable")


@dataclass(frozen=True)
class ErrorCell:
    alpha: float
    beta: float
    nu: float
    stable: bool
    tr_exact: float = math.nan
    tr_pred1: float = math.nan
    tr_pred2: float = math.nan
    rel_err: float = math.nan
    degenerate: bool = False

    def exceeds(self, threshold: float = 0.2) -> bool:
        return self.stable and not self.degenerate and self.rel_err > threshold


def error_grid(beta_grid: int, nu_grid: int) -> tuple[np.ndarray, np.ndarray]:
    """β uniform on [0, 1) (right end excluded), ν uniform on [0, 1]."""
    return np.linspace(0.0, 1.0, int(beta_grid) + 1)[:-1], np.linspace(0.0, 1.0, int(nu_grid))


def error_cell(alpha: float, beta: float, nu: float, problem: QuadraticProblem) -> ErrorCell:
    params = MomentumParams(alpha, beta, nu)
    try:
        rep = lyapunov_exact(build_system(params, problem), problem.noise_cov)
    except UnstableSystemError:
        return ErrorCell(alpha, beta, nu, False)
    exact = rep.tr_a_sigma_x
    p1 = predict_tr_first_order(params, problem)
    p2 = predict_tr_second_order(params, problem)
    if exact < DEGENERATE_TRACE:
        return ErrorCell(alpha, beta, nu, True, exact, p1, p2, math.nan, True)
    return ErrorCell(alpha, beta, nu, True, exact, p1, p2, abs(exact - p2) / exact)


def approx_error_map(alpha_list, beta_grid: int, nu_grid: int, problem: QuadraticProblem,
                     threshold: float = 0.2, mapper=map) -> list[ErrorCell]:
    """Relative error of the second-order trace prediction over an (α, β, ν) grid.

    Cells are ordered row-major over (α, β, ν).  ``mapper`` may be a parallel
    map with ordered results (e.g. ``ThreadPoolExecutor.map``).
    """
    betas, nus = error_grid(beta_grid, nu_grid)
    jobs = [(float(a), float(b), float(n)) for a in alpha_list for b in betas for n in nus]
    return list(mapper(lambda j: error_cell(*j, problem), jobs))
