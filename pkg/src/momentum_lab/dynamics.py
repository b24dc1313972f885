"""QHM update rules, the NAG lookahead form, parameter schedules and their convergence conditions."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Union

import numpy as np

from .core import InvalidArgument, MomentumParams, OptimizerState


def _as_gradient(state: OptimizerState, gradient) -> np.ndarray:
    g = np.asarray(gradient, dtype=np.float64).reshape(-1)
    if g.shape != state.x.shape or state.d.shape != state.x.shape:
        raise InvalidArgument(
            f"dimension mismatch: x {state.x.shape}, d {state.d.shape}, gradient {g.shape}"
        )
    return g


def qhm_step(state: OptimizerState, gradient, params: MomentumParams) -> OptimizerState:
    """One QHM step.

    ``d <- (1 - beta) g + beta d`` followed by
    ``x <- x - alpha [(1 - nu) g + nu d]``.  ``nu = 0`` is SGD and ``nu = 1``
    the normalized heavy ball.
    """
    g = _as_gradient(state, gradient)
    a, b, n = params.alpha, params.beta, params.nu
    d = (1.0 - b) * g + b * state.d
    x = state.x - a * ((1.0 - n) * g + n * d)
    return OptimizerState(x, d, state.k + 1)


def sgd_step(state: OptimizerState, gradient, alpha: float) -> OptimizerState:
    g = _as_gradient(state, gradient)
    return OptimizerState(state.x - alpha * g, state.d, state.k + 1)


def normalized_shb_step(state: OptimizerState, gradient, alpha: float, beta: float) -> OptimizerState:
    g = _as_gradient(state, gradient)
    d = (1.0 - beta) * g + beta * state.d
    return OptimizerState(state.x - alpha * d, d, state.k + 1)


@dataclass(frozen=True)
class SwitchConfig:
    """Momentum reset switch: momentum is kept only while ``||d|| <= rho``."""

    enabled: bool = True
    rho: float = float("inf")

    def __post_init__(self):
        if self.enabled and not self.rho > 0:
            raise InvalidArgument("rho must be positive when the switch is enabled")

    @classmethod
    def from_gradient_bound(cls, g_est: float) -> "SwitchConfig":
        # inert in benign runs: ten times the expected gradient norm
        return cls(True, 10.0 * float(g_est))


def qhm_step_switched(state: OptimizerState, gradient, params: MomentumParams,
                      switch: SwitchConfig) -> OptimizerState:
    """Unnormalized QHM with momentum switch.

    ``d <- g + i beta d`` with ``i = 1`` iff ``||d|| <= rho``, then
    ``x <- x - alpha [(1 - nu) g + nu d]``.
    """
    g = _as_gradient(state, gradient)
    keep = (not switch.enabled) or np.linalg.norm(state.d) <= switch.rho
    d = g + params.beta * state.d if keep else g.copy()
    x = state.x - params.alpha * ((1.0 - params.nu) * g + params.nu * d)
    return OptimizerState(x, d, state.k + 1)


def nag_original_step(state: OptimizerState, gradient_oracle: Callable[[np.ndarray], np.ndarray],
                      params: MomentumParams) -> OptimizerState:
    """Nesterov's method in lookahead form (``params.nu`` is ignored).

    ``d <- beta d + grad(x - alpha beta d)``, ``x <- x - alpha d``.  With
    constant parameters, ``y = x - alpha beta d_prev`` follows QHM with
    ``nu = beta`` and step size ``alpha / (1 - beta)``.
    """
    a, b = params.alpha, params.beta
    g = np.asarray(gradient_oracle(state.x - a * b * state.d), dtype=np.float64)
    g = _as_gradient(state, g)
    d = b * state.d + g
    return OptimizerState(state.x - a * d, d, state.k + 1)


def nag_lookahead_point(state: OptimizerState, params: MomentumParams) -> np.ndarray:
    """The QHM-side iterate ``x - alpha beta d`` corresponding to a NAG state."""
    return state.x - params.alpha * params.beta * state.d


def nag_to_qhm_params(params: MomentumParams) -> MomentumParams:
    return MomentumParams(params.alpha / (1.0 - params.beta), params.beta, params.beta)


# -- schedules -------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    params: MomentumParams
    variant = "constant"


@dataclass(frozen=True)
class BetaToZero:
    """``alpha_k = alpha0 (k+1)^-omega``, ``beta_k = beta0 * beta_decay^k``, constant ``nu``."""

    omega: float
    beta0: float
    beta_decay: float
    alpha0: float = 1.0
    nu: float = 1.0
    variant = "beta_to_zero"

    def __post_init__(self):
        if not self.omega > 0 or not self.alpha0 > 0:
            raise InvalidArgument("omega and alpha0 must be positive")
        if not 0 <= self.beta0 < 1:
            raise InvalidArgument("beta0 must lie in [0, 1)")
        if not 0 <= self.beta_decay <= 1:
            raise InvalidArgument("beta_decay must lie in [0, 1]")
        if not 0 <= self.nu <= 1:
            raise InvalidArgument("nu must lie in [0, 1]")


@dataclass(frozen=True)
class BetaToOne:
    """``alpha_k = (k+1)^-omega`` and ``1 - nu_k beta_k = (k+1)^-c``."""

    omega: float
    c: float
    nu_policy: str = "equal_to_beta"
    variant = "beta_to_one"

    def __post_init__(self):
        if not (self.omega > 0 and self.c > 0):
            raise InvalidArgument("omega and c must be positive")
        if self.nu_policy not in ("equal_to_beta", "one"):
            raise InvalidArgument(f"unknown nu_policy {self.nu_policy!r}")


@dataclass(frozen=True)
class ConstantAndDrop:
    """Piecewise-constant stages ``(params, steps)``; the last stage persists forever."""

    stages: tuple = field(default_factory=tuple)
    variant = "constant_and_drop"

    def __post_init__(self):
        stages = tuple((p, int(n)) for p, n in self.stages)
        if not stages:
            raise InvalidArgument("constant_and_drop needs at least one stage")
        if any(n <= 0 for _, n in stages):
            raise InvalidArgument("stage durations must be positive")
        object.__setattr__(self, "stages", stages)


ParamSchedule = Union[Constant, BetaToZero, BetaToOne, ConstantAndDrop]


def schedule_at(schedule: ParamSchedule, k: int) -> MomentumParams:
    if k < 0:
        raise InvalidArgument("k must be >= 0")
    a, b, n = schedule_arrays(schedule, k, 1)
    return MomentumParams(a[0], b[0], n[0])


def schedule_arrays(schedule: ParamSchedule, start: int, count: int):
    """Vectorized ``(alpha_k, beta_k, nu_k)`` for ``k = start, ..., start + count - 1``."""
    k = np.arange(start, start + count, dtype=np.float64)
    if isinstance(schedule, Constant):
        p = schedule.params
        return np.full(count, p.alpha), np.full(count, p.beta), np.full(count, p.nu)
    if isinstance(schedule, BetaToZero):
        alpha = schedule.alpha0 * (k + 1.0) ** (-schedule.omega)
        beta = schedule.beta0 * schedule.beta_decay ** k
        return alpha, beta, np.full(count, float(schedule.nu))
    if isinstance(schedule, BetaToOne):
        alpha = (k + 1.0) ** (-schedule.omega)
        prod = 1.0 - (k + 1.0) ** (-schedule.c)
        if schedule.nu_policy == "equal_to_beta":
            beta = np.sqrt(prod)
            return alpha, beta, beta.copy()
        return alpha, prod, np.ones(count)
    if isinstance(schedule, ConstantAndDrop):
        ends = np.cumsum([n for _, n in schedule.stages])
        idx = np.minimum(np.searchsorted(ends, k, side="right"), len(ends) - 1)
        table = np.array([[p.alpha, p.beta, p.nu] for p, _ in schedule.stages])
        return table[idx, 0], table[idx, 1], table[idx, 2]
    raise InvalidArgument(f"unknown schedule {schedule!r}")


def schedule_to_dict(schedule: ParamSchedule) -> dict:
    if isinstance(schedule, Constant):
        return {"variant": "constant", **schedule.params.as_dict()}
    if isinstance(schedule, BetaToZero):
        return {"variant": "beta_to_zero", "omega": schedule.omega, "beta0": schedule.beta0,
                "beta_decay": schedule.beta_decay, "alpha0": schedule.alpha0, "nu": schedule.nu}
    if isinstance(schedule, BetaToOne):
        return {"variant": "beta_to_one", "omega": schedule.omega, "c": schedule.c,
                "nu_policy": schedule.nu_policy}
    return {"variant": "constant_and_drop",
            "stages": [{**p.as_dict(), "steps": n} for p, n in schedule.stages]}


def schedule_from_dict(d: dict) -> ParamSchedule:
    d = dict(d)
    variant = d.pop("variant", None)
    try:
        if variant == "constant":
            return Constant(MomentumParams(**d))
        if variant == "beta_to_zero":
            return BetaToZero(**d)
        if variant == "beta_to_one":
            return BetaToOne(**d)
        if variant == "constant_and_drop":
            stages = []
            for s in d.pop("stages"):
                s = dict(s)
                steps = s.pop("steps")
                stages.append((MomentumParams(**s), steps))
            if d:
                raise TypeError(f"unexpected keys {sorted(d)}")
            return ConstantAndDrop(tuple(stages))
    except TypeError as exc:
        raise InvalidArgument(f"bad {variant} schedule: {exc}") from None
    raise InvalidArgument(f"unknown schedule variant {variant!r}")


# -- asymptotic conditions ---------------------------------------------------


@dataclass
class ConditionReport:
    satisfied: bool
    violated: list
    reason: str = ""


VANISHING_MOMENTUM = ("sum_alpha_diverges", "sum_alpha_sq_finite", "beta_to_zero", "sup_beta_below_one")
PERSISTENT_MOMENTUM = ("sum_alpha_diverges", "sum_one_minus_nubeta_sq_finite",
            "sum_alpha_sq_over_one_minus_nubeta_finite", "beta_to_one")


def _exact(x) -> Fraction:
    # decimal literal semantics: 0.8 means 4/5, not its binary neighbour
    return Fraction(repr(float(x)))


def _power_law_facts(schedule) -> dict:
    """Truth value of each named condition for a parametric family."""
    one = Fraction(1)
    if isinstance(schedule, BetaToZero):
        w, b0, q = _exact(schedule.omega), _exact(schedule.beta0), _exact(schedule.beta_decay)
        alpha_sq = 2 * w > one
        # beta_decay in [0, 1] and beta0 < 1, so sup beta_k = beta0 and 1 - nu_k beta_k stays >= 1 - beta0
        return {
            "sum_alpha_diverges": w <= one,
            "sum_alpha_sq_finite": alpha_sq,
            "beta_to_zero": b0 == 0 or q < one,
            "sup_beta_below_one": b0 < one,
            "beta_to_one": False,
            "sum_one_minus_nubeta_sq_finite": False,
            "sum_alpha_sq_over_one_minus_nubeta_finite": alpha_sq,
        }
    if isinstance(schedule, BetaToOne):
        w, c = _exact(schedule.omega), _exact(schedule.c)
        return {
            "sum_alpha_diverges": w <= one,
            "sum_alpha_sq_finite": 2 * w > one,
            "beta_to_zero": False,
            # beta_k < 1 for every k but approaches 1 when c > 0
            "sup_beta_below_one": c <= 0,
            "beta_to_one": c > 0,
            "sum_one_minus_nubeta_sq_finite": 2 * c > one,
            "sum_alpha_sq_over_one_minus_nubeta_finite": 2 * w - c > one,
        }
    if isinstance(schedule, Constant):
        p = schedule.params
        b, nb = _exact(p.beta), _exact(p.nu) * _exact(p.beta)
        return {
            "sum_alpha_diverges": True,
            "sum_alpha_sq_finite": False,
            "beta_to_zero": b == 0,
            "sup_beta_below_one": b < one,
            "beta_to_one": False,
            "sum_one_minus_nubeta_sq_finite": nb == one,
            "sum_alpha_sq_over_one_minus_nubeta_finite": False,
        }
    raise InvalidArgument(f"unknown schedule {schedule!r}")


def check_asymptotic_conditions(schedule: ParamSchedule, regime: str) -> ConditionReport:
    """Decide symbolically whether a schedule family meets the almost-sure convergence conditions.

    ``regime`` is ``"vanishing_momentum"`` (``beta_k -> 0``) or ``"persistent_momentum"``
    (``nu_k beta_k -> 1``).  Power-law exponents are compared as exact
    rationals.
    """
    if regime not in ("vanishing_momentum", "persistent_momentum"):
        raise InvalidArgument(f"regime must be 'vanishing_momentum' or 'persistent_momentum', got {regime!r}")
    names = VANISHING_MOMENTUM if regime == "vanishing_momentum" else PERSISTENT_MOMENTUM
    if isinstance(schedule, ConstantAndDrop):
        last, _ = schedule.stages[-1]
        facts = _power_law_facts(Constant(last))
        violated = [n for n in names if not facts[n]]
        return ConditionReport(False, violated, "constant tail")
    facts = _power_law_facts(schedule)
    violated = [n for n in names if not facts[n]]
    return ConditionReport(not violated, violated, "" if not violated else "violated: " + ", ".join(violated))
