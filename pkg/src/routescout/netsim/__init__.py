"""Packet-level network simulator driving the monitors, aggregator, solver and selector."""
from .flows import FlowSpec, SendOutcome, TupleAllocator, rto_ns, sample_packets, tcp_flow_process
from .output import summary, write_outputs
from .paths import CongestionModel, InjectError, PathModel, Schedule
from .scenario import (
    DEFAULT_CONTROL,
    DEFAULT_MONITORS,
    EventSpec,
    Scenario,
    ScenarioError,
    build_scenario,
    load_document,
    load_scenario,
    validate_scenario,
)
from .sim import FlowTruth, RunResult, Simulation, run

__all__ = [
    "CongestionModel",
    "DEFAULT_CONTROL",
    "DEFAULT_MONITORS",
    "EventSpec",
    "FlowSpec",
    "FlowTruth",
    "InjectError",
    "PathModel",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "Schedule",
    "SendOutcome",
    "Simulation",
    "TupleAllocator",
    "build_scenario",
    "load_document",
    "load_scenario",
    "rto_ns",
    "run",
    "sample_packets",
    "summary",
    "tcp_flow_process",
    "validate_scenario",
    "write_outputs",
]
