"""Finite-field random linear network coding with finite active memory,
plus a round-based simulator for dynamic and adversarial networks."""

from .coding import MemoryPolicy, NodeState, Packet, Population, ReceiveOutcome
from .engine import SimulationConfig, SimulationTrace, run
from .errors import (
    CapacityError,
    ConfigParseError,
    ConfigurationError,
    NotReadyError,
    SingularMatrixError,
    UsageError,
    ValidationError,
)
from .field import FieldSpec
from .topology import DirectedGraph, EdgeDistribution, graph_generator

__all__ = [
    "CapacityError", "ConfigParseError", "ConfigurationError", "DirectedGraph", "EdgeDistribution",
    "FieldSpec", "MemoryPolicy", "NodeState", "NotReadyError", "Packet", "Population",
    "ReceiveOutcome", "SimulationConfig", "SimulationTrace", "SingularMatrixError", "UsageError",
    "ValidationError", "graph_generator", "run",
]
__version__ = "0.1.0"
