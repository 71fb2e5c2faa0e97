"""Mean-field dynamics of the driven dissipative dimer."""

from .continuation import (
    BifurcationPoint,
    BranchRecord,
    BranchSeed,
    ContinuationError,
    antisymmetric_null_vector,
    asymmetric_branch,
    branch_switch_pitchfork,
    continue_branch,
    detect_bifurcations,
    symmetric_branch,
)
from .cycles import LimitCycle, NotPeriodicError, find_limit_cycle, integrate_orbit, poincare_section, seed_near
from .diagram import (
    BifurcationDiagram,
    Equilibrium,
    compute_diagram,
    cycle_frequency,
    equilibria_at,
    focus_between_hopfs,
    max_equilibrium_intensity,
    sample_cycles,
    stable_equilibria,
)
from .model import (
    STUDY_POINT,
    NewtonResult,
    ScaledParams,
    as_complex,
    classify,
    intensities,
    is_symmetric,
    jacobian,
    mu_rescale,
    newton_equilibrium,
    physical_drive,
    pitchfork_test,
    rhs,
    scaled_params,
    sorted_eigenvalues,
    state,
    swap,
    symmetric_equilibria,
    symmetric_intensities,
    to_physical_time,
    to_scaled_time,
)
