"""A modular federated-learning simulator with a numpy training engine."""

from .core import (
    ContextView,
    Federation,
    FLContext,
    RoundRecord,
    StopCriteria,
    aggregate_fedavg,
    check_stop,
    run_federated,
)
from .data import DataContainer, DistributionPlan
from .events import EventBus, Subscriber
from .managers import ClientUpdate, ParallelManager, SequentialManager, SimClient, derive_seed
from .model import Metrics, ModelSpec, ParamVector, TrainConfig, evaluate, forward, init_params, train
from .selectors import ClusterSelector, RandomSelector, kmeans

__version__ = "0.1.0"

__all__ = [
    "ClientUpdate",
    "ClusterSelector",
    "ContextView",
    "DataContainer",
    "DistributionPlan",
    "EventBus",
    "FLContext",
    "Federation",
    "Metrics",
    "ModelSpec",
    "ParallelManager",
    "ParamVector",
    "RandomSelector",
    "RoundRecord",
    "SequentialManager",
    "SimClient",
    "StopCriteria",
    "Subscriber",
    "TrainConfig",
    "aggregate_fedavg",
    "check_stop",
    "derive_seed",
    "evaluate",
    "forward",
    "init_params",
    "kmeans",
    "run_federated",
    "train",
]
