"""Barrier and band policies for a singularly controlled, reflected diffusion."""
from .band import (BandSolution, BandSolveError, NonConvergenceError, OrderingViolationError, band_value,
                   SingularJacobianError, band_jacobian, band_residual, multistart_band, solve_band)
from .barrier import (BarrierSolution, BracketError, barrier_solution, barrier_value, best_barrier,
                      find_barrier_roots, no_reflection_threshold, no_reflection_value,
                      smooth_fit_residual, value_slope_sign)
from .model import (CANONICAL, REFERENCE_PARAMS, AssumptionError, ModelParams, ParameterError, Side,
                    YieldFn, apply_L, apply_M, gamma_roots, liu_uniqueness_bound, phi,
                    structural_sign_changes, table_yield)
from .sim import (HorizonTooShortError, Policy, SimConfig, SimEstimate, martingale_diagnostic,
                  sample_path, simulate_many, simulate_policy)
from .verify import VerificationReport, compare_policies, verify_hjb

__version__ = "0.1.0"
