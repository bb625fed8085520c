"""Parallel-in-time solvers for all-at-once BDF discretizations of linear evolution problems.

The space-time system ``(I + tau*beta*K) U - U Sigma_s^T = G`` is solved by
splitting ``Sigma_s`` into a circulant (diagonalized by the FFT) and a rank-s
remainder handled with the Sherman-Morrison-Woodbury formula, whose reduced
system is solved in a polynomial Krylov space of ``K``.
"""

from .analysis import (SpectralSummary, condition_bound, dense_allatonce, dense_jl,
                       dft_scaling_condition, jl_extremes, lambda_min_spd, sequential_oracle)
from .baselines import GmresReport, allatonce_apply, circulant_precond_apply, gmres_allatonce
from .driver import (SolveReport, allatonce_residual, expected_pint_loops, solve_bdf, solve_be,
                     solve_be_alpha, warmup_history)
from .errors import (ConvergenceError, EstimationError, OracleSizeError, OrderUnsupportedError,
                     ParadiagError, ParameterError, SingularShiftError, SizeError,
                     UnsupportedCombinationError)
from .krylov import (ArnoldiBasis, BlockArnoldiBasis, InnerSolveResult, arnoldi_extend,
                     block_fom_solve, fom_solve, residual_certificate)
from .shifted import (PinTLedger, ShiftBank, factor_all, pint_sweep, pint_sweep_block,
                      pint_sweep_single_rhs)
from .spatial import (PROBLEMS, SpatialProblem, advdiff2d, bdf_rhs, heat2d, heat_lambda_max,
                      heat_lambda_min, reversed_wind, wind)
from .time_structure import (BdfScheme, LowRankTimeSplit, TimeSpectrum, bdf_coefficients,
                             build_sigma, spectrum, split_time_operator, time_transform)

__version__ = "0.1.0"
