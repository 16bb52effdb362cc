"""Exception types shared across the simulator."""


class MonitorSimError(Exception):
    """Base class for all simulator errors."""


class GenerationFailed(MonitorSimError):
    """Map or crowd generation could not satisfy its invariants within the retry budget."""


class FormatError(MonitorSimError):
    """A serialized artifact failed schema or invariant validation."""


class ConfigError(MonitorSimError):
    """Bad run configuration; message names the offending key path."""


class NoPath(MonitorSimError):
    """Buffer-respecting free space does not connect the two query points."""


class OutOfBounds(MonitorSimError):
    """Query point lies outside the map."""


class SpawnFailed(MonitorSimError):
    """Robot spawn poses with the required separation could not be sampled."""


class EpisodeFinished(MonitorSimError):
    """step() was called on an environment whose episode already ended."""


class ProtocolError(MonitorSimError):
    """Malformed or out-of-order policy-bridge message."""


class ShapeMismatch(MonitorSimError):
    """Task estimate operands have incompatible shapes."""


class NoCandidates(MonitorSimError):
    """Camera placement was asked to choose from an empty candidate set."""


class Infeasible(MonitorSimError):
    """Speed-plan constraints conflict with the speed bound."""


class MissingTeamSize(MonitorSimError):
    """Marginal-utility input skips a team size in the contiguous range."""


class DegenerateVariance(MonitorSimError):
    """Correlation input has zero variance in one coordinate."""
