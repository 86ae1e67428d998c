"""Free-boundary incompressible porous media simulator.

A pseudo-spectral solver for the motion of a fluid surface over a stratified
density state in a porous medium: the surface is coupled to a transported
density perturbation through Dirichlet-Neumann and source operators computed
by a strip elliptic solver, with a Rayleigh-Taylor-type stability monitor
and an optional iterative-construction mode.
"""

from .config import ConfigError, SimConfig, parse_config
from .dynamics import (
    StabilityReport,
    VelocityBundle,
    assemble_velocity,
    conserved_quantities,
    rhs_density,
    rhs_surface,
    stability_report,
    strip_sobolev_norm,
)
from .elliptic import (
    EllipticError,
    EllipticProblem,
    EllipticSolution,
    StripSolver,
    compute_B_V,
    dirichlet_neumann,
    lambda_symbol,
    lambda_symbol_at,
    solve_phi1,
    solve_phi2,
    solver_for,
    surface_source_trace,
)
from .flatten import (
    EllipticCoeffs,
    FiniteDepth,
    FlatteningError,
    FlatteningMap,
    InfiniteDepth,
    build_coeffs,
    build_map,
    pushforward_sample,
    select_delta,
)
from .picard import PicardError, PicardRun, picard_iterate
from .profiles import (
    StratificationProfile,
    affine_profile,
    check_class_G,
    constant_profile,
    eval_profile,
    tanh_profile,
    user_profile,
)
from .spectral import (
    FourierGrid,
    SobolevIndex,
    SurfaceField,
    apply_multiplier,
    dealias,
    make_grid,
    smoothing_layer,
    sobolev_norm,
    x_derivative,
)
from .stepper import (
    CheckpointError,
    DiagnosticsRow,
    RunContext,
    RunResult,
    SimState,
    StepControl,
    StepError,
    cfl_dt,
    checkpoint,
    initial_state,
    make_context,
    restore,
    run_simulation,
    step_imex,
)
from .strip import StripField, StripGrid, make_strip_grid

__version__ = "0.1.0"
