from .core import (
    IN,
    INFINITY,
    OUT,
    Atomic,
    Coupled,
    Coupling,
    Model,
    Port,
    StructureError,
    add_time,
    to_seconds,
    to_us,
)
from .injection import Injector, send_lines
from .simulator import (
    HYBRID,
    REALTIME,
    VIRTUAL,
    Coordinator,
    SimulationClock,
    SimulationError,
    SimulationReport,
    TraceRecord,
    ZenoError,
    flatten,
    run_paced,
    simulate,
)

__all__ = [
    "IN", "OUT", "INFINITY", "Atomic", "Coupled", "Coupling", "Model", "Port",
    "StructureError", "add_time", "to_seconds", "to_us", "Injector", "send_lines",
    "VIRTUAL", "REALTIME", "HYBRID", "Coordinator", "SimulationClock",
    "SimulationError", "SimulationReport", "TraceRecord", "ZenoError",
    "flatten", "run_paced", "simulate",
]
