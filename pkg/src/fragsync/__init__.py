"""fragsync: deterministic lockstep simulator for fragment-wise cross-region
training synchronization (DiLoCo, Streaming DiLoCo, CoCoDC)."""

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InternalError",
    "NonFiniteError",
    "FragmentationSpec",
    "FragmentView",
    "partition",
    "fragment_views",
    "gather",
    "scatter",
    "AdamWState",
    "NesterovState",
    "OptimConfig",
    "adamw_step",
    "outer_step",
    "warmup_cosine_lr",
    "LinkModel",
    "NetworkTimings",
    "allreduce_time",
    "observe",
    "overlap_depth",
    "SchedulerConfig",
    "SchedulePlan",
    "ImpactTracker",
    "plan",
    "update_impact",
    "select_fragment",
    "TaskConfig",
    "WorkerShard",
    "EvalReport",
    "make_task",
    "minibatch_grad",
    "evaluate",
    "ProtocolConfig",
    "TimingConfig",
    "WorkerState",
    "GlobalShardState",
    "InFlightSync",
    "CompensationSnapshot",
    "Simulation",
    "METHODS",
    "ExperimentConfig",
    "load_config",
    "RunRecord",
    "EvalPoint",
    "run_experiment",
    "run_single",
    "steps_to_threshold",
    "summarize",
    "emit",
]

from .config import ExperimentConfig, load_config
from .errors import ConfigError, InternalError, NonFiniteError
from .harness import (
    EvalPoint,
    RunRecord,
    emit,
    run_experiment,
    run_single,
    steps_to_threshold,
    summarize,
)
from .netsim import LinkModel, NetworkTimings, allreduce_time, observe, overlap_depth
from .optim import (
    AdamWState,
    NesterovState,
    OptimConfig,
    adamw_step,
    outer_step,
    warmup_cosine_lr,
)
from .params import FragmentationSpec, FragmentView, fragment_views, gather, partition, scatter
from .protocol import (
    METHODS,
    CompensationSnapshot,
    GlobalShardState,
    InFlightSync,
    ProtocolConfig,
    Simulation,
    TimingConfig,
    WorkerState,
)
from .scheduler import (
    ImpactTracker,
    SchedulePlan,
    SchedulerConfig,
    plan,
    select_fragment,
    update_impact,
)
from .tasks import EvalReport, TaskConfig, WorkerShard, evaluate, make_task, minibatch_grad
