"""Self-check suite behind ``momentum-lab verify``.

Each group is a function returning a list of :class:`CheckResult`.  The
checks compare closed forms against independent brute-force computations.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from . import rate as rate_mod
from .core import MomentumParams, OptimizerState, QuadraticProblem, Spectrum, benchmark_problem, \
    make_rng, random_spd_problem
from .dynamics import nag_lookahead_point, nag_original_step, nag_to_qhm_params, normalized_shb_step, \
    qhm_step, sgd_step
from .rate import global_rate, local_rate, shb_no_tradeoff_interval, spectral_radius_oracle, \
    stability_max_alpha
from .stationary import block_identity_residual, build_system, lyapunov_exact, predict_first_order, \
    predict_tr_second_order


@dataclass(frozen=True)
class CheckResult:
    group: str
    name: str
    passed: bool
    detail: str


def _fmt(x) -> str:
    return f"{x:.9g}"


def random_admissible(rng: np.random.Generator, count: int):
    """Random ``(alpha, beta, nu, lam)`` with alpha inside the stability bound at ``lam``."""
    beta = rng.uniform(0.0, 1.0, count)
    nu = rng.uniform(0.0, 1.0, count)
    lam = 10.0 ** rng.uniform(-3.0, 3.0, count)
    amax = rate_mod.max_alpha_array(beta, nu, lam)
    alpha = amax * rng.uniform(1e-6, 1.0, count)
    return alpha, beta, nu, lam


def rate_oracle_errors(count: int = 10_000, seed: int = 0) -> np.ndarray:
    rng = make_rng(seed)
    out = np.empty(count)
    for i, (a, b, n, lam) in enumerate(zip(*random_admissible(rng, count))):
        p = MomentumParams(a, b, n)
        out[i] = abs(local_rate(p, lam)[0] - spectral_radius_oracle(p, lam))
    return out


def group_rate() -> list[CheckResult]:
    err = rate_oracle_errors()
    res = [CheckResult("rate", "closed form vs 2x2 eigenvalues (1e4 samples)", bool(err.max() < 1e-12),
                       f"max err {_fmt(err.max())}")]
    rng = make_rng(1)
    worst_in, worst_out = 0.0, math.inf
    for _ in range(100):
        b, n, ell = rng.uniform(0, 0.999), rng.uniform(), 10.0 ** rng.uniform(-2, 3)
        am = stability_max_alpha(b, n, ell)
        worst_in = max(worst_in, local_rate(MomentumParams(am * (1 - 1e-6), b, n), ell)[0])
        worst_out = min(worst_out, local_rate(MomentumParams(am * (1 + 1e-6), b, n), ell)[0])
    res.append(CheckResult("rate", "stability bound is sharp", worst_in < 1.0 <= worst_out,
                           f"max inside {_fmt(worst_in)}, min outside {_fmt(worst_out)}"))
    spec = Spectrum(1.0, 10.0)
    lo, hi = shb_no_tradeoff_interval(0.9, spec)
    dev = max(abs(global_rate(MomentumParams(a, 0.9, 1.0), spec).rate - math.sqrt(0.9))
              for a in np.linspace(lo, hi, 52)[1:-1])
    res.append(CheckResult("rate", "heavy-ball plateau equals sqrt(beta)", dev < 1e-12, f"max dev {_fmt(dev)}"))
    return res


def group_reductions() -> list[CheckResult]:
    rng = make_rng(2)
    prob = random_spd_problem(4, Spectrum(0.5, 20.0), 1.0, 11)
    a, b = 0.04, 0.7
    s_q0 = OptimizerState.initial(rng.standard_normal(4))
    s_q1 = OptimizerState.initial(s_q0.x)
    s_sgd = OptimizerState.initial(s_q0.x)
    s_shb = OptimizerState.initial(s_q0.x)
    ok0 = ok1 = True
    for _ in range(1000):
        xi = rng.standard_normal(4)
        s_q0 = qhm_step(s_q0, prob.grad(s_q0.x) + xi, MomentumParams(a, b, 0.0))
        s_sgd = sgd_step(s_sgd, prob.grad(s_sgd.x) + xi, a)
        s_q1 = qhm_step(s_q1, prob.grad(s_q1.x) + xi, MomentumParams(a, b, 1.0))
        s_shb = normalized_shb_step(s_shb, prob.grad(s_shb.x) + xi, a, b)
        ok0 &= bool(np.array_equal(s_q0.x, s_sgd.x))
        ok1 &= bool(np.array_equal(s_q1.x, s_shb.x) and np.array_equal(s_q1.d, s_shb.d))
    return [CheckResult("reductions", "nu=0 equals SGD bit for bit (1e3 steps)", ok0, ""),
            CheckResult("reductions", "nu=1 equals normalized heavy ball bit for bit (1e3 steps)", ok1, "")]


def nag_equivalence_gap(problem: QuadraticProblem, alpha: float, beta: float, x0, steps: int = 100) -> float:
    """Max distance between NAG lookahead points and QHM(nu=beta) iterates over ``steps`` steps."""
    p_nag = MomentumParams(alpha, beta, 0.0)
    p_qhm = nag_to_qhm_params(p_nag)
    nag = OptimizerState.initial(x0)
    qhm = OptimizerState.initial(x0)
    gap = 0.0
    for _ in range(steps):
        nag = nag_original_step(nag, problem.grad, p_nag)
        qhm = qhm_step(qhm, problem.grad(qhm.x), p_qhm)
        y = nag_lookahead_point(nag, p_nag)
        gap = max(gap, float(np.max(np.abs(y - qhm.x))))
    return gap


def group_nag() -> list[CheckResult]:
    rng = make_rng(3)
    worst = 0.0
    for i in range(20):
        prob = random_spd_problem(int(rng.integers(1, 6)), Spectrum(1.0, 10.0 ** rng.uniform(0, 2)), 0.0, 100 + i)
        ell = prob.spectrum.ell
        b = rng.uniform(0, 0.95)
        a = rng.uniform(0.05, 0.9) / ell
        worst = max(worst, nag_equivalence_gap(prob, a, b, rng.standard_normal(prob.dim)))
    return [CheckResult("nag", "NAG lookahead == QHM(nu=beta, alpha/(1-beta)) (20 problems)", worst < 1e-10,
                        f"max gap {_fmt(worst)}")]


def group_lyapunov() -> list[CheckResult]:
    rng = make_rng(4)
    worst, worst_block = 0.0, 0.0
    for i in range(100):
        n = int(rng.integers(1, 9))
        # mu >= 0.1 keeps ||Sigma_z|| moderate: the residual floor is about eps * ||Sigma_z||
        mu = 10.0 ** rng.uniform(-1, 0)
        prob = random_spd_problem(n, Spectrum(mu, mu * 10.0 ** rng.uniform(0, 2)), rng.uniform(0, 1), 200 + i)
        b, nu = rng.uniform(0, 0.95), rng.uniform()
        p = MomentumParams(stability_max_alpha(b, nu, prob.spectrum.ell) * rng.uniform(0.01, 0.9), b, nu)
        rep = lyapunov_exact(build_system(p, prob), prob.noise_cov)
        worst = max(worst, rep.residual)
        scale = max(1.0, float(np.max(np.abs(rep.sigma_z))))
        worst_block = max(worst_block, block_identity_residual(p, rep) / scale)
    res = [CheckResult("lyapunov", "residual < 1e-12 on 100 random instances", worst < 1e-12, f"max {_fmt(worst)}"),
           CheckResult("lyapunov", "momentum/iterate block identity", worst_block < 1e-10, f"max {_fmt(worst_block)}")]
    err = 0.0
    for a_, al, s2 in [(1.0, 0.1, 1.0), (3.0, 0.5, 2.0), (0.2, 9.0, 0.3)]:
        prob = QuadraticProblem([[a_]], [0.0], [[s2]])
        rep = lyapunov_exact(build_system(MomentumParams(al, 0.0, 0.0), prob), prob.noise_cov)
        err = max(err, abs(rep.tr_a_sigma_x - al * s2 / (2 - al * a_)))
    res.append(CheckResult("lyapunov", "1-D SGD closed form", err < 1e-12, f"max err {_fmt(err)}"))
    return res


TAYLOR_LADDER = (0.02, 0.01, 0.005, 0.0025)


def taylor_slopes(problem: QuadraticProblem, beta: float, nu: float, ladder=TAYLOR_LADDER) -> tuple[float, float]:
    """Log-log slopes of the first-order matrix residual and the second-order trace error vs alpha."""
    r1, r2 = [], []
    for a in ladder:
        p = MomentumParams(a, beta, nu)
        rep = lyapunov_exact(build_system(p, problem), problem.noise_cov)
        r1.append(predict_first_order(p, problem, rep)["residual_norm"])
        r2.append(abs(rep.tr_a_sigma_x - predict_tr_second_order(p, problem)))
    la = np.log(ladder)
    return float(np.polyfit(la, np.log(r1), 1)[0]), float(np.polyfit(la, np.log(r2), 1)[0])


def group_taylor() -> list[CheckResult]:
    prob = benchmark_problem()
    res = []
    for b in (0.5, 0.9):
        for nu in (0.0, b, 1.0):
            s1, s2 = taylor_slopes(prob, b, nu)
            ok = 1.7 <= s1 <= 2.3 and 2.6 <= s2 <= 3.4
            res.append(CheckResult("taylor", f"orders at beta={b:g}, nu={nu:g}", ok,
                                   f"slopes {s1:.3f}, {s2:.3f}"))
    return res


GROUPS = {
    "rate": group_rate,
    "reductions": group_reductions,
    "nag": group_nag,
    "lyapunov": group_lyapunov,
    "taylor": group_taylor,
}


@contextlib.contextmanager
def inject_fault(name: str | None):
    """Temporarily corrupt the rate kernel (used to prove the suite can fail)."""
    if name is None:
        yield
        return
    if name != "c2-sign":
        raise ValueError(f"unknown fault {name!r}")
    original = rate_mod._coeffs

    def flipped(alpha, beta, nu, lam):
        c1, c2, _ = original(alpha, beta, nu, lam)
        return c1, -c2, c1 * c1 + 4.0 * c2

    rate_mod._coeffs = flipped
    try:
        yield
    finally:
        rate_mod._coeffs = original


def run_checks(only: str | None = None, fault: str | None = None) -> list[CheckResult]:
    names = [only] if only else list(GROUPS)
    for n in names:
        if n not in GROUPS:
            raise KeyError(n)
    out = []
    with inject_fault(fault):
        for n in names:
            out.extend(GROUPS[n]())
    return out
