"""Exception hierarchy shared across the package."""


class TwoScaleError(Exception):
    """Base class for all package errors."""


class MeshError(TwoScaleError):
    pass


class HoleTooLarge(MeshError):
    pass


class HoleUnresolved(MeshError):
    pass


class HeightOutOfRange(TwoScaleError):
    """A height value left its admissible interval.

    ``node`` and ``time`` are filled in by the time stepper so callers can
    report where a simulation had to stop.
    """

    def __init__(self, message, node=None, time=None, value=None):
        super().__init__(message)
        self.node = node
        self.time = time
        self.value = value


class SolverError(TwoScaleError):
    pass


class NotConverged(SolverError):
    pass


class IndefiniteDetected(SolverError):
    pass


class IncompatibleRhs(SolverError):
    pass


class FormatError(TwoScaleError):
    pass


class MetadataMismatch(TwoScaleError):
    pass


class ConfigError(TwoScaleError):
    """Invalid configuration; ``errors`` lists ``(field_path, reason)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {reason}" for path, reason in self.errors)
        super().__init__(lines or "invalid configuration")


class SampleFailed(TwoScaleError):
    """A table sample could not be computed; ``h`` names the offending height."""

    def __init__(self, h, cause):
        super().__init__(f"cell problem failed at h={h!r}: {cause}")
        self.h = h
        self.cause = cause
