"""Observer synthesis for nonlinear systems on bounded operating regions.

The package computes an injective transform conjugating a nonlinear plant
to a stable linear filter, certifies injectivity and small-gain conditions
empirically, inverts the transform, and simulates the resulting observers.
"""

from .model import (BENCHMARK_NAMES, DomainSpec, ObserverDesign,
                    SaturatedSystem, SystemModel, benchmark, cutoff)
from .numerics import GainMatrices, LyapunovSolution, Trajectory, \
    gain_matrices, integrate, solve_lyapunov
from .transform import TransformTable, amplitude_bound, eval_T, eval_T_batch, \
    select_horizon, tabulate
from .injectivity import InjectivityReport, injectivity_modulus, \
    sample_eigenvalues
from .inversion import InverseQuery, invert, invert_batch
from .highgain import GainCert, approx_error, build_Ta, certify_gain, lie_bundle
from .runtime import RescaleSpec, SimTrace, estimate_rate, lyapunov_trace, \
    simulate

__version__ = "0.1.0"
