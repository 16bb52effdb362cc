"""Multi-robot indoor crowd-monitoring simulator and planner benchmark."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateVariance,
    EpisodeFinished,
    FormatError,
    GenerationFailed,
    Infeasible,
    MissingTeamSize,
    MonitorSimError,
    NoCandidates,
    NoPath,
    OutOfBounds,
    ProtocolError,
    ShapeMismatch,
    SpawnFailed,
)

__all__ = [
    "ConfigError",
    "DegenerateVariance",
    "EpisodeFinished",
    "FormatError",
    "GenerationFailed",
    "Infeasible",
    "MissingTeamSize",
    "MonitorSimError",
    "NoCandidates",
    "NoPath",
    "OutOfBounds",
    "ProtocolError",
    "ShapeMismatch",
    "SpawnFailed",
]
