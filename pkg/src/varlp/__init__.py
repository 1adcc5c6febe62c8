"""Iterative regularisation in variable exponent Lebesgue spaces.

Modular-based gradient descent and its stochastic (subset) variant for
linear inverse problems, alongside Landweber and l^p dual Landweber
baselines, a matched parallel-beam projector and a CT experiment pipeline.
"""
from .errors import (ConfigInvalid, DimensionMismatch, Divergence, ExponentOutOfRange,
                     MapOverflow, NoConvergence, VarlpError)
from .operators import (Geometry, LinearOperator, SubsetPartition, adjoint_apply, apply,
                        dense_operator, operator_norm, partition_views, radon_build)
from .solvers import (RunLog, SolverConfig, SolverState, StepSchedule, banach_sgd_step,
                      dual_landweber_step, landweber_step, modular_gd_step,
                      modular_sgd_step, run, step_size)
from .spaces import (ExponentMap, duality_map_const, duality_map_varexp, j_rho, j_rho_bar,
                     j_rho_bar_inverse, luxemburg_norm, modular_rho, modular_rho_bar,
                     validate_exponent_map)

__version__ = "0.1.0"
