"""Voting-based right-of-way for connected vehicles at unsignalised intersections."""

from .geometry import (
    Approach,
    IntersectionGeometry,
    Movement,
    PathDirection,
    QuorumMode,
    conflicts,
    max_batch,
    quorum,
)
from .protocol import ElectionStatus, MessageKind, ProtocolMessage, VehicleInfo
from .scenario import ConfigError, ScenarioConfig, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Approach",
    "ConfigError",
    "ElectionStatus",
    "IntersectionGeometry",
    "MessageKind",
    "Movement",
    "PathDirection",
    "ProtocolMessage",
    "QuorumMode",
    "ScenarioConfig",
    "VehicleInfo",
    "conflicts",
    "max_batch",
    "quorum",
    "run_scenario",
]
