"""QoS-aware DAG service offloading in a simulated fog environment,
trained with distributed asynchronous actor-learner PPO."""

from .dag import (
    DagEdge,
    RankedPlan,
    ServiceDag,
    TaskSpec,
    load_dag,
    make_plan,
    save_dag,
    validate_dag,
)
from .scenario import (
    Scenario,
    Server,
    ServerPool,
    default_scenario,
    load_scenario,
    save_scenario,
    scaled_scenario,
)
from .env import OffloadEnv, check_constraints, service_exec_time
from .workload import DatasetSpec, TopologyParams, WeightRanges, build_dataset
from .nn import AdamState, MlpParams, load_checkpoint, save_checkpoint
from .learner import ApoHyper, ExperienceBatch, Learner, MasterBuffer, optimize_model
from .actor import Actor, RunConfig, evaluate_policy, run_training, sample_action
from .baselines import OracleResult, exhaustive_best, greedy_assignment, random_assignment
from .harness import ExperimentSpec, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Actor", "AdamState", "ApoHyper", "DagEdge", "DatasetSpec",
    "ExperienceBatch", "ExperimentSpec", "Learner", "MasterBuffer",
    "MlpParams", "OffloadEnv", "OracleResult", "RankedPlan", "RunConfig",
    "Scenario", "Server", "ServerPool", "ServiceDag", "TaskSpec",
    "TopologyParams", "WeightRanges", "build_dataset", "check_constraints",
    "default_scenario", "evaluate_policy", "exhaustive_best",
    "greedy_assignment", "load_checkpoint", "load_dag", "load_scenario",
    "make_plan", "optimize_model", "random_assignment", "run_experiment",
    "run_training", "sample_action", "save_checkpoint", "save_dag",
    "save_scenario", "scaled_scenario", "service_exec_time", "validate_dag",
]
