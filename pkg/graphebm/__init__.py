"""graphebm - learned coarse-grained population dynamics on region graphs."""

from .abm import run_simulation, sample_scenario
from .coarsen import (
    aggregate_snapshot,
    build_coarse_trajectory,
    classify_income,
    classify_zone,
    compute_income_thresholds,
    split_dataset,
)
from .config import RunConfig, derive_seed, load_run_config
from .ebm import euler_rollout, init_params, param_count, system_rhs
from .exceptions import (
    ConfigurationError,
    ContractError,
    DataFileError,
    DivergenceError,
    DomainError,
    GraphEBMError,
    UndefinedMetricError,
)
from .graph import build_region_graph, case_study_graph, neighbors
from .metrics import evaluate_split, export_series, mae, mape
from .models import (
    AdamState,
    AgentTrajectory,
    AggregationRules,
    BetaForm,
    CoarseTrajectory,
    EBMConfig,
    EBMParams,
    EvalSummary,
    ExogenousSeries,
    FluxScaling,
    RegionGraph,
    ScenarioParams,
    TrainReport,
)
from .tape import GradientTape
from .training import adam_step, finite_diff_check, grad, train, trajectory_loss

__version__ = "0.1.0"

__all__ = [
    # Pipeline stages
    "sample_scenario",
    "run_simulation",
    "build_coarse_trajectory",
    "split_dataset",
    "train",
    "evaluate_split",
    # Model
    "system_rhs",
    "euler_rollout",
    "init_params",
    "param_count",
    "GradientTape",
    "grad",
    "adam_step",
    "trajectory_loss",
    "finite_diff_check",
    # Models
    "RegionGraph",
    "ExogenousSeries",
    "ScenarioParams",
    "AgentTrajectory",
    "AggregationRules",
    "CoarseTrajectory",
    "EBMConfig",
    "EBMParams",
    "AdamState",
    "TrainReport",
    "EvalSummary",
    "BetaForm",
    "FluxScaling",
    "RunConfig",
    # Helpers
    "build_region_graph",
    "case_study_graph",
    "neighbors",
    "classify_zone",
    "classify_income",
    "compute_income_thresholds",
    "aggregate_snapshot",
    "mape",
    "mae",
    "export_series",
    "derive_seed",
    "load_run_config",
    # Exceptions
    "GraphEBMError",
    "ConfigurationError",
    "ContractError",
    "DomainError",
    "DivergenceError",
    "DataFileError",
    "UndefinedMetricError",
]
