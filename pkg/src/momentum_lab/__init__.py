"""Quasi-hyperbolic momentum on quadratics: rates, stability, stationary covariance and simulation."""

__version__ = "0.1.0"

from .core import (InvalidArgument, MomentumParams, OptimizerState, QuadraticProblem, Spectrum,
                   benchmark_problem, gaussian_noise_draw, make_rng, random_spd_problem)
from .dynamics import (BetaToOne, BetaToZero, Constant, ConstantAndDrop, SwitchConfig,
                       check_asymptotic_conditions, nag_original_step, qhm_step, qhm_step_switched,
                       schedule_at)
from .rate import (NoOptimumError, RateReport, char_coeffs, global_rate, local_rate, optimal_alpha,
                   optimal_params, rate_monotonicity_breakpoint, shb_no_tradeoff_interval,
                   spectral_radius_oracle, stability_max_alpha, verify_nu_monotonicity)
from .stationary import (UnstableSystemError, approx_error_map, build_system, lyapunov_exact,
                         optimal_nu_prediction, predict_first_order, predict_tr_second_order)
from .sim import run_asymptotic, run_constant_and_drop, run_deterministic, run_stochastic

__all__ = [name for name in dir() if not name.startswith("_")]
