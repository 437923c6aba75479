"""Exception hierarchy for nnsql.

Errors are grouped by origin: model/data problems, store problems, and
engine problems.  The CLI maps these groups onto distinct exit codes.
"""

from __future__ import annotations


class NnsqlError(Exception):
    """Base class for all package errors."""


# --- model / data errors ---------------------------------------------------


class InvariantViolation(NnsqlError):
    """A model or graph breaks a structural invariant."""


class ParseError(NnsqlError):
    """A model file cannot be parsed; carries field context in the message."""


class CyclicGraph(NnsqlError):
    """The node/edge set contains a directed cycle."""


class NonLayered(NnsqlError):
    """Some node is reachable from the inputs by paths of different lengths."""


class InvalidSpec(NnsqlError):
    """A convolution spec produces non-positive output dimensions."""


class BreakpointOutOfDomain(NnsqlError):
    """A piecewise-linear breakpoint lies outside the synthesis domain."""


class InvalidInterval(NnsqlError):
    """Integration interval with from >= to."""


class NotGeometryEligible(NnsqlError):
    """Geometry queries need a 1-input, one-hidden-layer, 1-output network
    with identity output activation."""


class UnsupportedActivation(NnsqlError):
    """Activation not expressible by the requested query strategy."""


class MissingBaseline(NnsqlError):
    """Saliency needs exactly one baseline input vector (or an explicit vec_id)."""


# --- store errors ----------------------------------------------------------


class DuplicateModel(NnsqlError):
    """model_id already loaded and replace not requested."""


class UnknownModel(NnsqlError):
    """model_id not present in the store."""


# --- engine errors ---------------------------------------------------------


class EngineUnavailable(NnsqlError):
    """No usable database engine for the requested location/backend."""


class EngineError(NnsqlError):
    """An engine rejected a statement.  Carries the SQL text for diagnostics."""

    def __init__(self, message: str, sql: str | None = None):
        super().__init__(message)
        self.sql = sql

    def __str__(self) -> str:
        base = super().__str__()
        if self.sql:
            return f"{base}\n--- offending SQL ---\n{self.sql}"
        return base


class CapabilityMissing(EngineError):
    """Query needs recursive aggregation but the engine lacks it."""


class CheckMismatch(NnsqlError):
    """SQL result and native oracle disagree beyond tolerance."""
