"""Multi-agent trajectory generation with projected diffusion sampling."""

from .core import (
    Box,
    ConstraintSpec,
    ContractError,
    InfeasibleError,
    NoiseSchedule,
    Obstacle,
    Scenario,
    TrajectorySet,
    agent_pairs,
    collision_residuals,
    convex_residuals,
    is_feasible,
    make_schedule,
    max_violation,
)
from .expert import (
    ExpertConfig,
    InfeasibleReport,
    build_dataset,
    load_dataset,
    path_cost,
    solve_expert,
    straight_line_init,
)
from .harness import (
    EvalReport,
    ExperimentConfig,
    InstanceRecord,
    constraint_instance_count,
    path_length,
    plot,
    run_experiment,
    violation_rate,
    write_csv,
)
from .projection import (
    AlmDiagnostics,
    AlmState,
    OracleFailure,
    ProjectionConfig,
    alm_project,
    guidance_gradient,
    oracle_project,
    project_convex,
)
from .samplers import (
    Method,
    SampleResult,
    SamplerConfig,
    derive_seed,
    sample,
    sample_batch,
)
from .scenario import (
    FamilyKind,
    FormatError,
    GenerationError,
    ScenarioFamily,
    generate,
    load_scenario,
    load_trajectories,
    save_scenario,
    save_trajectories,
    scenario_from_json,
    scenario_to_json,
)
from .score_model import (
    ScoreNetwork,
    TrainConfig,
    dsm_loss_and_grad,
    embed_scenario,
    forward,
    load_network,
    perturb,
    save_network,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AlmDiagnostics",
    "AlmState",
    "Box",
    "ConstraintSpec",
    "ContractError",
    "EvalReport",
    "ExperimentConfig",
    "ExpertConfig",
    "FamilyKind",
    "FormatError",
    "GenerationError",
    "InfeasibleError",
    "InfeasibleReport",
    "InstanceRecord",
    "Method",
    "NoiseSchedule",
    "Obstacle",
    "OracleFailure",
    "ProjectionConfig",
    "SampleResult",
    "SamplerConfig",
    "Scenario",
    "ScenarioFamily",
    "ScoreNetwork",
    "TrainConfig",
    "TrajectorySet",
    "agent_pairs",
    "alm_project",
    "build_dataset",
    "collision_residuals",
    "constraint_instance_count",
    "convex_residuals",
    "derive_seed",
    "dsm_loss_and_grad",
    "embed_scenario",
    "forward",
    "generate",
    "guidance_gradient",
    "is_feasible",
    "load_dataset",
    "load_network",
    "load_scenario",
    "load_trajectories",
    "make_schedule",
    "max_violation",
    "oracle_project",
    "path_cost",
    "path_length",
    "perturb",
    "plot",
    "project_convex",
    "run_experiment",
    "sample",
    "sample_batch",
    "save_network",
    "save_scenario",
    "save_trajectories",
    "scenario_from_json",
    "scenario_to_json",
    "solve_expert",
    "straight_line_init",
    "train",
    "violation_rate",
    "write_csv",
    "__version__",
]
