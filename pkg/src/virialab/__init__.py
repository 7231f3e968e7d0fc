"""Interacting Brownian particles on periodic boxes and their pressure laws.

Simulates overdamped pairwise-interacting diffusions, estimates the
macroscopic pressure P(rho) = sigma^2 rho - Psi(rho) from time-averaged
virial sums, compares against closed-form approximations, and evolves the
limiting nonlinear diffusion equation.
"""

__version__ = "0.1.0"

from .analysis import (
    ComparisonReport,
    ExponentPrediction,
    SlopeFit,
    claim1_pressure,
    claim2_low_density_flag,
    claim2_pressure,
    compare_report,
    fit_loglog_slope,
    meanfield_pressure,
    predicted_exponent,
)
from .dynamics import (
    NeighborList,
    ParticleState,
    RelaxResult,
    SimulationConfig,
    SimulationResult,
    build_initial_lattice,
    build_neighbor_list,
    compute_forces,
    diffusive_burn_in_steps,
    em_step,
    noise_generator,
    relax_deterministic,
    simulate,
    stable_dt,
    total_energy,
)
from .errors import (
    BlowUpError,
    ConfigurationError,
    DivergentIntegralError,
    DomainError,
    InstabilityError,
    InsufficientDataError,
    NotApplicableError,
    VirialabError,
)
from .pde import PdeSolution, PressureLaw, solve_pde, stable_time_step
from .potentials import (
    GaussianCubic,
    GaussianRepulsive,
    PowerLawAttractiveRepulsive,
    PowerLawRepulsive,
    ZeroPotential,
    c_v,
    continuity_constant,
    force,
    interaction_cutoff,
    radial_derivative,
    spec_from_dict,
    spec_to_dict,
    value,
    virial_kernel,
)
from .torus import TorusBox, minimal_image, wrap
from .virial import (
    PressureCurve,
    VirialEstimate,
    estimate_pressure,
    lattice_virial,
    pressure_curve,
    read_curve_csv,
    virial_sum,
    write_curve_csv,
)
