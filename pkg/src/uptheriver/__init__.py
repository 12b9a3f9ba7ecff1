"""Up-the-river particle system: simulation, free-boundary solver, verification."""

from .errors import (
    AllocationError,
    CapabilityError,
    DomainError,
    QuadratureError,
    SolverError,
)
from .kernels import (
    FOUR_OVER_SQRT_PI,
    absorbed_tail,
    bm_cdf,
    bm_tail,
    confinement_prob,
    density_u1,
    g_term,
    heat_kernel,
    heat_kernel_dx,
    heat_kernel_time_integral,
    lambda_lhs,
    neumann_kernel,
    tail_absorption_phase,
)
from .observables import (
    RecordSpec,
    TrajectoryRecord,
    atlas_identity_residual,
    identity_residual,
    nondecreasing_seminorm,
    sup_deviation,
    survivors_scaled,
    tail_count,
)
from .particles import (
    AtlasSystem,
    CouplingReport,
    CutoffThinnedProfile,
    DriftAllocation,
    OriginPaddedProfile,
    ParticleSystem,
    TableProfile,
    atlas_from_positions,
    coupled_run,
    init_river,
    make_profile,
    run,
    run_atlas,
    sample_atlas_initial,
    step,
)
from .stefan import (
    BoundaryCurve,
    HydroProfile,
    boundary_residual,
    eval_tail_moving,
    solve_boundary,
    stability_probe,
)
from .strategies import (
    Strategy,
    builtin_strategies,
    get_strategy,
    null_drift,
    proportional_to_inverse_position,
    push_the_laggard,
    push_the_leader,
    register_strategy,
    uniform_split,
)

__version__ = "0.1.0"
