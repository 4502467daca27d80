from .container import DataContainer, train_test_split
from .distributors import (
    DistributionPlan,
    distribute_dirichlet,
    distribute_label,
    distribute_shard,
    distribute_unique,
    export_heatmap,
    largest_remainder,
    validate_plan,
)
from .providers import generate_synthetic, load_csv, load_idx, write_idx

__all__ = [
    "DataContainer",
    "DistributionPlan",
    "distribute_dirichlet",
    "distribute_label",
    "distribute_shard",
    "distribute_unique",
    "export_heatmap",
    "generate_synthetic",
    "largest_remainder",
    "load_csv",
    "load_idx",
    "train_test_split",
    "validate_plan",
    "write_idx",
]
