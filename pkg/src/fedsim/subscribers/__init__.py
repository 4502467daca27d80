from .bandwidth import BandwidthAccountant
from .checkpoint import (
    CheckpointSubscriber,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .divergence import DivergenceAnalyzer, DivergenceResult, analyze
from .log import LoggingSubscriber
from .metrics import MetricsStore, read_metrics

__all__ = [
    "BandwidthAccountant",
    "CheckpointSubscriber",
    "DivergenceAnalyzer",
    "DivergenceResult",
    "LoggingSubscriber",
    "MetricsStore",
    "analyze",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "read_metrics",
    "save_checkpoint",
]
