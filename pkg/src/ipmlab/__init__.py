"""ipmlab: a pseudo-spectral laboratory for the incompressible porous media
equation near stably stratified densities.

Subpackages cover the spectral transform core, the exact linear propagator
with its quadrature oracle, the nonlinear solver, level-set stratification
diagnostics, decay-rate fitting, and a scenario-driven CLI.
"""

__version__ = "0.1.0"

from .grid import Grid, GridMismatchError, RealField, SpectralField, forward, inverse
from .spectral import (aniso_seminorm, dealias, frac_deriv, grad_linf,
                       sobolev_norm, stream_function, velocity)
from .linear import (LinearState, SharpnessSpec, evolve_exact, linear_norm_oracle,
                     multiplier, sharpness_data, weight_W, weight_W_bound)
from .solver import (BlowUpError, SimulationState, SolverConfig, StratifiedProfile,
                     Trajectory, cfl_dt, rhs, run, step_rk4)
from .stratify import (LevelGrid, LevelSetDecomposition, MonotonicityError,
                       PotentialEnergyReport, decompose, distribution_measure,
                       energy_report, level_curve, potential_energy,
                       potential_energy_direct, stratification_stability)
from .diagnostics import (DecayFit, NormSeries, decay_report, energy_balance,
                          fit_power_law, time_average)

__all__ = [name for name in dir() if not name.startswith("_")]
