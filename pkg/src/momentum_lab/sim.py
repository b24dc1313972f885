"""Trajectory simulation of QHM on quadratic problems.

All runs go through one compiled kernel that advances the iterate over a
block of steps with per-step ``(alpha, beta, nu)`` and a pre-drawn noise
block.  Noise is generated independently of the iterates, in fixed-size
chunks from a single seeded stream, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import (InvalidArgument, MomentumParams, QuadraticProblem, gaussian_noise_block,
                   make_rng)
from .dynamics import (BetaToOne, Constant, ParamSchedule, SwitchConfig,
                       check_asymptotic_conditions, schedule_arrays)
from .rate import global_rate

DIVERGENCE_THRESHOLD = 1e12
CHUNK = 1 << 16
UNDERFLOW_FLOOR = 1e-280


@njit(cache=True, nogil=True)
def _advance(a, xs, x, d, alphas, betas, nus, noise, use_noise, switched, rho,
             burn_from, k0, dist, loss, gnorm, cov_acc, acc):
    """Run ``len(alphas)`` QHM steps in place.

    ``dist/loss/gnorm[j]`` receive the metrics of the iterate after step
    ``k0 + j``.  Iterates with global index ``>= burn_from`` are added to the
    second-moment accumulators.  Returns the global step index at which the
    distance first exceeded the divergence threshold, or -1.
    """
    n = x.shape[0]
    e = np.empty(n)
    g = np.empty(n)
    for j in range(alphas.shape[0]):
        al = alphas[j]
        b = betas[j]
        nu = nus[j]
        for i in range(n):
            e[i] = x[i] - xs[i]
        for i in range(n):
            s = 0.0
            for m in range(n):
                s += a[i, m] * e[m]
            g[i] = s
            if use_noise:
                g[i] += noise[j, i]
        if switched:
            dn = 0.0
            for i in range(n):
                dn += d[i] * d[i]
            keep = 1.0 if math.sqrt(dn) <= rho else 0.0
            for i in range(n):
                d[i] = g[i] + keep * b * d[i]
        else:
            for i in range(n):
                d[i] = (1.0 - b) * g[i] + b * d[i]
        for i in range(n):
            x[i] -= al * ((1.0 - nu) * g[i] + nu * d[i])

        dd = 0.0
        for i in range(n):
            e[i] = x[i] - xs[i]
            dd += e[i] * e[i]
        fl = 0.0
        gg = 0.0
        for i in range(n):
            s = 0.0
            for m in range(n):
                s += a[i, m] * e[m]
            fl += e[i] * s
            gg += s * s
        dist[j] = math.sqrt(dd)
        loss[j] = 0.5 * fl
        gnorm[j] = math.sqrt(gg)
        k = k0 + j + 1
        if not dist[j] <= DIVERGENCE_THRESHOLD:
            return k
        if k >= burn_from:
            for i in range(n):
                for m in range(n):
                    cov_acc[i, m] += e[i] * e[m]
            acc[0] += 0.5 * fl
            acc[1] += 1.0
    return -1


@dataclass
class TrajectoryStats:
    iterates_kept: int
    mean_loss_window: float
    empirical_cov: np.ndarray
    measured_rate: float | None
    grad_norm_min: float
    diverged: bool = False
    divergence_step: int | None = None
    steps_run: int = 0
    distances: np.ndarray = field(default=None, repr=False)
    losses: np.ndarray = field(default=None, repr=False)
    grad_norms: np.ndarray = field(default=None, repr=False)
    x: np.ndarray = field(default=None, repr=False)
    d: np.ndarray = field(default=None, repr=False)
    warnings: list = field(default_factory=list)

    @property
    def tr_a_cov(self) -> float:
        """Twice the windowed mean loss, i.e. the empirical ``tr(A Sigma_x)``."""
        return 2.0 * self.mean_loss_window


@dataclass
class _RunState:
    x: np.ndarray
    d: np.ndarray
    k: int = 0


def _schedule_of(params_or_schedule) -> ParamSchedule:
    if isinstance(params_or_schedule, MomentumParams):
        return Constant(params_or_schedule)
    return params_or_schedule


def _initial_metrics(problem, x):
    e = x - problem.optimum
    return float(np.linalg.norm(e)), problem.loss(x), float(np.linalg.norm(problem.curvature @ e))


def _simulate(problem: QuadraticProblem, schedule: ParamSchedule, state: _RunState, steps: int,
              burn_in: int, rng: np.random.Generator | None, noise_bound: float | None = None,
              switch: SwitchConfig | None = None):
    """Core driver. Returns per-iterate arrays (index 0 is the start) and accumulators."""
    n = problem.dim
    a = np.ascontiguousarray(problem.curvature)
    xs = np.ascontiguousarray(problem.optimum)
    dist = np.empty(steps + 1)
    loss = np.empty(steps + 1)
    gnorm = np.empty(steps + 1)
    dist[0], loss[0], gnorm[0] = _initial_metrics(problem, state.x)
    cov_acc = np.zeros((n, n))
    acc = np.zeros(2)
    use_noise = rng is not None
    switched = switch is not None and switch.enabled
    rho = switch.rho if switched else math.inf
    start_k = state.k
    burn_from = start_k + burn_in + 1
    empty = np.zeros((0, n))
    done = 0
    div_step = -1
    while done < steps:
        c = min(CHUNK, steps - done)
        al, be, nu = schedule_arrays(schedule, state.k, c)
        noise = gaussian_noise_block(problem, rng, c, noise_bound) if use_noise else empty
        sl = slice(done + 1, done + 1 + c)
        div_step = _advance(a, xs, state.x, state.d, al, be, nu, noise, use_noise, switched, rho,
                            burn_from, state.k, dist[sl], loss[sl], gnorm[sl], cov_acc, acc)
        if div_step >= 0:
            ran = div_step - state.k
            state.k = div_step
            done += ran
            break
        state.k += c
        done += c
    return dist[: done + 1], loss[: done + 1], gnorm[: done + 1], cov_acc, acc, div_step


def _stats_from(dist, loss, gnorm, cov_acc, acc, div_step, state, rate=None):
    kept = int(acc[1])
    cov = cov_acc / kept if kept else np.full(cov_acc.shape, np.nan)
    return TrajectoryStats(
        iterates_kept=kept,
        mean_loss_window=float(acc[0] / kept) if kept else math.nan,
        empirical_cov=0.5 * (cov + cov.T),
        measured_rate=rate,
        grad_norm_min=float(np.min(gnorm)),
        diverged=div_step >= 0,
        divergence_step=div_step if div_step >= 0 else None,
        steps_run=len(dist) - 1,
        distances=dist, losses=loss, grad_norms=gnorm,
        x=state.x.copy(), d=state.d.copy(),
    )


def fit_rate(distances: np.ndarray) -> float | None:
    """Geometric decay factor of a distance curve.

    Least squares on ``log distance`` over the second half of the usable
    prefix (before underflow).  Curves that ever increase inside that window
    are fit on their local maxima instead.  ``None`` when fewer than two
    usable points remain.
    """
    dist = np.asarray(distances, dtype=float)
    bad = np.flatnonzero(~(dist > UNDERFLOW_FLOOR) | ~np.isfinite(dist))
    end = int(bad[0]) if bad.size else len(dist)
    if end < 4:
        return None
    k = np.arange(end // 2, end)
    y = dist[k]
    if np.any(np.diff(y) > 0):
        inner = (y[1:-1] >= y[:-2]) & (y[1:-1] >= y[2:])
        peaks = np.flatnonzero(inner) + 1
        if peaks.size >= 2:
            k, y = k[peaks], y[peaks]
    slope = np.polyfit(k.astype(float), np.log(y), 1)[0]
    return float(math.exp(slope))


def run_deterministic(problem: QuadraticProblem, params: MomentumParams, x0, max_steps: int) -> TrajectoryStats:
    """Noiseless QHM from ``x0``; ``measured_rate`` is fit from the distance curve.

    If ``x0`` is the optimum the rate is undefined and a warning is attached.
    """
    state = _RunState(np.array(x0, dtype=float).reshape(-1), np.zeros(problem.dim))
    if state.x.shape != (problem.dim,):
        raise InvalidArgument("x0 dimension mismatch")
    out = _simulate(problem, Constant(params), state, int(max_steps), int(max_steps), None)
    stats = _stats_from(*out, state)
    if stats.diverged:
        stats.warnings.append(f"diverged at step {stats.divergence_step}")
    elif stats.distances[0] == 0.0:
        stats.warnings.append("started at the optimum; rate undefined")
    else:
        stats.measured_rate = fit_rate(stats.distances)
        if stats.measured_rate is None:
            stats.warnings.append("too few usable points for a rate fit")
    if not global_rate(params, problem.spectrum).stable:
        stats.warnings.append("parameters outside the stability region")
    return stats


def run_stochastic(problem: QuadraticProblem, schedule, x0, max_steps: int, burn_in: int | None = None,
                   seed: int = 0, *, rng: np.random.Generator | None = None,
                   noise_bound: float | None = None, switch: SwitchConfig | None = None) -> TrajectoryStats:
    """QHM with fresh Gaussian noise each step; stats over the iterates after ``burn_in``.

    ``burn_in`` defaults to half of ``max_steps``.  ``rng`` overrides
    ``seed`` (used for per-cell streams).
    """
    max_steps = int(max_steps)
    burn_in = max_steps // 2 if burn_in is None else int(burn_in)
    if not 0 <= burn_in < max_steps:
        raise InvalidArgument("need 0 <= burn_in < max_steps")
    state = _RunState(np.array(x0, dtype=float).reshape(-1), np.zeros(problem.dim))
    if state.x.shape != (problem.dim,):
        raise InvalidArgument("x0 dimension mismatch")
    rng = make_rng(seed) if rng is None else rng
    out = _simulate(problem, _schedule_of(schedule), state, max_steps, burn_in, rng, noise_bound, switch)
    stats = _stats_from(*out, state)
    if stats.diverged:
        stats.warnings.append(f"diverged at step {stats.divergence_step}; partial statistics")
    return stats


@dataclass
class AsymptoticResult:
    grad_norm_min_curve: np.ndarray
    initial_grad_norm: float
    final_grad_norm_min: float
    conditions: object
    regime: str
    stats: TrajectoryStats
    warnings: list = field(default_factory=list)

    @property
    def reduction(self) -> float:
        """Initial over final running-minimum gradient norm."""
        if self.final_grad_norm_min == 0.0:
            return math.inf
        return self.initial_grad_norm / self.final_grad_norm_min


def default_regime(schedule: ParamSchedule) -> str:
    return "persistent_momentum" if isinstance(schedule, BetaToOne) else "vanishing_momentum"


def run_asymptotic(problem: QuadraticProblem, schedule: ParamSchedule, x0, max_steps: int, seed: int = 0,
                   noise: str = "gaussian", bound: float | None = None, regime: str | None = None,
                   switch: SwitchConfig | None = None) -> AsymptoticResult:
    """Run a decaying schedule and track the running minimum of the true gradient norm.

    ``noise`` is ``"gaussian"`` or ``"truncated"`` (norm capped at ``bound``
    by resampling).  A schedule that fails the convergence conditions still
    runs, with a warning attached.
    """
    if noise not in ("gaussian", "truncated"):
        raise InvalidArgument(f"unknown noise family {noise!r}")
    if noise == "truncated" and not (bound is not None and bound > 0):
        raise InvalidArgument("truncated noise needs a positive bound")
    regime = regime or default_regime(schedule)
    report = check_asymptotic_conditions(schedule, regime)
    warnings = []
    if not report.satisfied:
        why = report.reason or ", ".join(report.violated)
        warnings.append(f"schedule does not satisfy {regime} conditions: {why}")
    stats = run_stochastic(problem, schedule, x0, max_steps, burn_in=max_steps - 1, seed=seed,
                           noise_bound=bound if noise == "truncated" else None, switch=switch)
    curve = np.minimum.accumulate(stats.grad_norms)
    warnings.extend(stats.warnings)
    return AsymptoticResult(curve, float(curve[0]), float(curve[-1]), report, regime, stats, warnings)


@dataclass
class StageResult:
    params: MomentumParams
    steps: int
    stats: TrajectoryStats
    deterministic_rate: float | None


def run_constant_and_drop(problem: QuadraticProblem, stages, x0, seed: int = 0,
                          rate_steps: int = 3000) -> list[StageResult]:
    """Chain constant-parameter stochastic stages, carrying ``(x, d)`` across stage boundaries.

    Each stage averages over its second half.  ``deterministic_rate`` is
    the fitted noiseless decay factor of the stage parameters from a generic
    start, for comparing rates across stages.
    """
    stages = [(p if isinstance(p, MomentumParams) else MomentumParams(*p), int(s)) for p, s in stages]
    if not stages:
        raise InvalidArgument("need at least one stage")
    spec = problem.spectrum
    for i, (p, s) in enumerate(stages):
        if s < 2:
            raise InvalidArgument(f"stage {i} needs at least 2 steps")
        rep = global_rate(p, spec)
        if not rep.stable:
            raise InvalidArgument(f"stage {i} ({p.alpha:.9g}, {p.beta:.9g}, {p.nu:.9g}) is unstable: "
                                  f"rate {rep.rate:.9g}")
    rng = make_rng(seed)
    state = _RunState(np.array(x0, dtype=float).reshape(-1), np.zeros(problem.dim))
    if state.x.shape != (problem.dim,):
        raise InvalidArgument("x0 dimension mismatch")
    probe = problem.optimum + np.ones(problem.dim)
    results = []
    for p, s in stages:
        out = _simulate(problem, Constant(p), state, s, s // 2, rng)
        stats = _stats_from(*out, state)
        stats.x, stats.d = state.x.copy(), state.d.copy()
        det = run_deterministic(problem, p, probe, rate_steps).measured_rate
        results.append(StageResult(p, s, stats, det))
        # keep the global step counter local to each stage's constant schedule
        state.k = 0
    return results


def parse_stages(text: str, beta: float, nu: float) -> list[tuple[MomentumParams, int]]:
    """Parse ``"alpha:steps,alpha:steps"`` into stage tuples sharing ``beta`` and ``nu``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            al, steps = part.split(":")
            out.append((MomentumParams(float(al), beta, nu), int(steps)))
        except ValueError as exc:
            raise InvalidArgument(f"bad stage {part!r}: expected alpha:steps") from exc
    if not out:
        raise InvalidArgument("no stages given")
    return out


__all__ = [
    "TrajectoryStats", "AsymptoticResult", "StageResult", "fit_rate", "run_deterministic",
    "run_stochastic", "run_asymptotic", "run_constant_and_drop", "parse_stages", "default_regime",
    "DIVERGENCE_THRESHOLD",
]
