"""Robust sparse-change CUSUM detection for linear models with uncertain system matrices."""

from .detector import (
    DetectorState,
    EvidenceSolver,
    RunResult,
    add_upper_bound,
    cusum_path,
    estimate_alpha,
    exact_evidence,
    run,
    threshold_for_fap,
    update,
)
from .errors import (
    AlreadyFired,
    DimMismatch,
    Diverged,
    InfeasibleDual,
    InfeasibleSet,
    RankDeficient,
    RankRetryExhausted,
    RosGuardError,
    SolverFailure,
    TooLarge,
    Unbounded,
)
from .gllr_exact import ExactConfig, branch_and_bound, solve_bruteforce, solve_exact, v_t_exact
from .gllr_relaxed import (
    SolverSchedule,
    box_relaxation_bound,
    build_socp,
    socp_relaxation,
    solve_lagrangian,
    v_t_relaxed,
)
from .model import ChangeScenario, SystemModel, generate_stream, orthogonal_projector, residual
from .problem import EvidenceConfig, EvidenceProblem, Solution, build_problem, check_solution
from .scenarios import ScenarioSpec, ieee14_region4, mimo_blockage, random_system
from .uncertainty import (
    DNormSet,
    EllipsoidSet,
    PolyhedralSet,
    RobustConstraintData,
    diameter,
    epsilon_guideline,
    support_function,
)

__version__ = "0.1.0"

__all__ = [
    "DetectorState",
    "EvidenceSolver",
    "RunResult",
    "add_upper_bound",
    "cusum_path",
    "estimate_alpha",
    "exact_evidence",
    "run",
    "threshold_for_fap",
    "update",
    "AlreadyFired",
    "DimMismatch",
    "Diverged",
    "InfeasibleDual",
    "InfeasibleSet",
    "RankDeficient",
    "RankRetryExhausted",
    "RosGuardError",
    "SolverFailure",
    "TooLarge",
    "Unbounded",
    "ExactConfig",
    "branch_and_bound",
    "solve_bruteforce",
    "solve_exact",
    "v_t_exact",
    "SolverSchedule",
    "box_relaxation_bound",
    "build_socp",
    "socp_relaxation",
    "solve_lagrangian",
    "v_t_relaxed",
    "ChangeScenario",
    "SystemModel",
    "generate_stream",
    "orthogonal_projector",
    "residual",
    "EvidenceConfig",
    "EvidenceProblem",
    "Solution",
    "build_problem",
    "check_solution",
    "ScenarioSpec",
    "ieee14_region4",
    "mimo_blockage",
    "random_system",
    "DNormSet",
    "EllipsoidSet",
    "PolyhedralSet",
    "RobustConstraintData",
    "diameter",
    "epsilon_guideline",
    "support_function",
]
