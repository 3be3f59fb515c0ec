"""Distributed data mining over simulated grid sites."""

from .data import Dataset, gen_baskets, gen_gaussian_mixture, round_robin_partition
from .dbscan import DensityModel, build_local_model, dbscan
from .ddbc import MergeConfig, hierarchical_merge, merge_pair, quality_P, speedup
from .sim import JobSpec, MessageTrace, Transport, account, run_job
from .topology import build_topology

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DensityModel", "JobSpec", "MergeConfig", "MessageTrace", "Transport",
    "account", "build_local_model", "build_topology", "dbscan", "gen_baskets",
    "gen_gaussian_mixture", "hierarchical_merge", "merge_pair", "quality_P",
    "round_robin_partition", "run_job", "speedup",
]
