"""Pseudospectral fluctuation-dissipation laboratory on the 2-torus.

Simulates the damped-driven surface transport equation

    d theta + u . grad theta dt
        = -alpha Lap^2 theta dt
          + alpha div(|grad theta|^2 grad theta) dt
          + sqrt(alpha) d eta,      u = (-d/dy, d/dx)(-Lap)^{-1/2} theta,

estimates its stationary measures by time averaging, checks the exact
moment balance identities against the noise amplitude sums A_s, and probes
the alpha -> 0 limit together with the conserved-functional structure of
the undamped transport.
"""

from .spectral import (
    GridSpec,
    advection_term,
    fractional_laplacian,
    grad_l4_4,
    l2_sq,
    p_laplacian_term,
    riesz_velocity,
    sobolev_sq,
    to_physical,
    to_spectral,
)
from .forcing import (
    EigenBasis,
    NoiseSpec,
    RngStream,
    default_noise,
    enumerate_basis,
    make_noise,
    sample_increment,
    spectral_sum,
)
from .integrator import (
    DivergenceError,
    EnsembleRecord,
    SimConfig,
    StepperState,
    TrajectoryRecord,
    run_ensemble,
    run_trajectory,
    step,
)
from .functionals import (
    BalanceReport,
    CasimirFunction,
    ObservableSet,
    casimir,
    casimir_family,
    dissipation_i,
    energy_minus_half,
    ito_residual,
    mass_m,
)
from .measure_lab import (
    HistogramSpec,
    MomentLedger,
    casimir_gram,
    histogram_atom_check,
    inviscid_sweep,
    stationary_residuals,
    time_average,
)
from .hamiltonian import (
    HamiltonianSystem,
    SandboxConfig,
    fd_step,
    gibbs_oracle,
    make_system,
    stationary_compare,
)

__version__ = "0.1.0"
