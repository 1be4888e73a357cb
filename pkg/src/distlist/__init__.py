"""Distributed lock-free linked list with live sublist migration, on a deterministic simulator."""

from .atomics import NEG_INF, AtomicWord, SharedCounter, rdcss, run
from .cluster import Cluster
from .core import ItemRef, LockFreeList, NodeNotFound, SentinelTarget, UnknownRef
from .scenarios import ScenarioConfig, load_scenario, parse_config, run_config

__all__ = [
    "NEG_INF",
    "AtomicWord",
    "Cluster",
    "ItemRef",
    "LockFreeList",
    "NodeNotFound",
    "ScenarioConfig",
    "SentinelTarget",
    "SharedCounter",
    "UnknownRef",
    "load_scenario",
    "parse_config",
    "rdcss",
    "run",
    "run_config",
]
