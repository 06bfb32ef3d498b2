"""Bitwise-reproducible elastic data-parallel training at desk scale.

The trained model is bit-identical across executor layouts, device kinds,
and checkpoint/restart schedules (given the matching determinism mode),
plus the planning and scheduling machinery that decides those layouts and
a trace-driven cluster simulator.
"""

from .buckets import BucketMap, allreduce, build_buckets_initial, rebuild_buckets_first_minibatch
from .engine import (
    DeterminismMode,
    ExecutorSpec,
    TrainRunConfig,
    TrainingState,
    init_training,
    reconfigure,
    run_minibatch,
)
from .checkpoint import checkpoint_restore, checkpoint_save
from .model import OptState, ToyModel, forward_backward, sgd_step
from .planner import (
    DevicePool,
    DeviceType,
    PlanConfig,
    Proposal,
    WorkloadProfile,
    enumerate_configs,
    fallback_on_slowdown,
    multi_executor_adjust,
    propose,
    update_profile,
    waste_model,
)
from .prng import rng_uniform01, splitmix64_next
from .reduction import KernelProfile, Sequential, Tree, reduce_sum
from .runlog import RunLog, bitdiff
from .sampling import DataPipeline, SamplePlan, epoch_indices
from .scenarios import RunSpec, run_matrix, run_training
from .scheduler import ResourceRequest, schedule
from .simulator import ClusterSim, PreemptionDirective, SimMetrics, TraceJob, simulate

__version__ = "0.1.0"

__all__ = [
    "BucketMap",
    "ClusterSim",
    "DataPipeline",
    "DevicePool",
    "DeviceType",
    "DeterminismMode",
    "ExecutorSpec",
    "KernelProfile",
    "OptState",
    "PlanConfig",
    "PreemptionDirective",
    "Proposal",
    "ResourceRequest",
    "RunLog",
    "RunSpec",
    "SamplePlan",
    "Sequential",
    "SimMetrics",
    "ToyModel",
    "TraceJob",
    "TrainRunConfig",
    "TrainingState",
    "Tree",
    "WorkloadProfile",
    "allreduce",
    "bitdiff",
    "build_buckets_initial",
    "checkpoint_restore",
    "checkpoint_save",
    "enumerate_configs",
    "epoch_indices",
    "fallback_on_slowdown",
    "forward_backward",
    "init_training",
    "multi_executor_adjust",
    "propose",
    "rebuild_buckets_first_minibatch",
    "reconfigure",
    "reduce_sum",
    "rng_uniform01",
    "run_matrix",
    "run_minibatch",
    "run_training",
    "schedule",
    "sgd_step",
    "simulate",
    "splitmix64_next",
    "update_profile",
    "waste_model",
]
