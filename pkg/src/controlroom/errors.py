"""Exception types shared across the package.

Every error raised by the library derives from ControlRoomError so callers
can catch one base class at the CLI boundary.
"""


class ControlRoomError(Exception):
    """Base class for all library errors."""


class ConfigError(ControlRoomError):
    """Invalid or incomplete configuration."""


# --- plant simulator ---

class NonFiniteState(ControlRoomError):
    """A state variable became NaN/Inf; signals a bad configuration."""


class DtTooLarge(ControlRoomError):
    """Integration step exceeds the configured stability bound."""


class UnknownVariable(ControlRoomError):
    """An alarm threshold references a variable the plant state lacks."""


class OperatorTimeout(ControlRoomError):
    """Operator callback exceeded the per-tick wall-clock budget."""


# --- telemetry ---

class NonMonotonicTime(ControlRoomError):
    """Appended record does not advance the episode clock."""


class SchemaMismatch(ControlRoomError):
    """Column set differs from the expected vocabulary.

    ``missing`` and ``unknown`` list the offending column names.
    """

    def __init__(self, message, missing=(), unknown=()):
        super().__init__(message)
        self.missing = list(missing)
        self.unknown = list(unknown)


class ParseError(ControlRoomError):
    """Malformed CSV content; carries the 1-based line number."""

    def __init__(self, message, line_no):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


# --- influence diagram ---

class CyclicGraph(ControlRoomError):
    """Edge set contains a directed cycle."""


class CptRowNotNormalized(ControlRoomError):
    """A conditional probability row does not sum to one."""

    def __init__(self, node, row):
        super().__init__(f"CPT row {row!r} of node {node!r} does not sum to 1")
        self.node = node
        self.row = row


class MissingTable(ControlRoomError):
    """A chance node lacks a CPT or a utility node lacks a table."""


class ZeroProbabilityEvidence(ControlRoomError):
    """The observed evidence has probability zero under the model."""


class UnknownHypothesis(ControlRoomError):
    """Procedure library has no entry for the requested hypothesis."""


class UnknownActuator(ControlRoomError):
    """No decision node is bound to the requested actuator."""


# --- reinforcement learning ---

class DimensionMismatch(ControlRoomError):
    """Vector operands have incompatible shapes."""


class NonFiniteLoss(ControlRoomError):
    """A training loss became NaN/Inf."""


class StateNotSpecialized(ControlRoomError):
    """A batch state fails the specialization predicate."""


class NoAgentForAbnormality(ControlRoomError):
    """Registry holds no agent for the requested abnormality id."""


# --- operator-state estimation ---

class DegenerateData(ControlRoomError):
    """All feature columns are constant; nothing to fit."""


class EmNonConvergence(ControlRoomError):
    """EM failed to converge (only raised when asked to be strict)."""


class SingularCovariance(ControlRoomError):
    """Tied covariance lost positive-definiteness beyond repair."""


class NumericalUnderflow(ControlRoomError):
    """Forward-pass scaling failed; the model is malformed."""


class InsufficientLabels(ControlRoomError):
    """Need at least one failed and one non-failed episode."""


class LabelMismatch(ControlRoomError):
    """Alert records and labels do not cover the same episodes."""


# --- orchestrator ---

class ModelMissing(ControlRoomError):
    """A required model (diagram, agent, HMM) is not loaded."""

    def __init__(self, model_name):
        super().__init__(f"required model not loaded: {model_name}")
        self.model_name = model_name


class NoActiveAbnormality(ControlRoomError):
    """Automation requested while no abnormality is active."""


class ApprovalMissing(ControlRoomError):
    """Automation requested without a logged operator approval."""


class ProtocolError(ControlRoomError):
    """Malformed wire message; the connection survives, the message does not."""


# --- analytics ---

class ZeroBaseline(ControlRoomError):
    """Baseline-TOI value is zero; the ratio is undefined."""


class MissingDimension(ControlRoomError):
    """A questionnaire response lacks a required dimension."""


class NoSuggestionTicks(ControlRoomError):
    """No suggestion was active in the analysis window."""


class NoControlEvents(ControlRoomError):
    """No manual-control events to score."""


class NoCriticalAlarm(ControlRoomError):
    """Episode has no critical alarm to measure against."""


class CohortTooSmall(ControlRoomError):
    """Too few participants for a percentile split."""


class SingularCorrelation(ControlRoomError):
    """Correlation matrix is singular after dropping constant columns."""


class EmptyGroup(ControlRoomError):
    """A comparison group has no rows."""
