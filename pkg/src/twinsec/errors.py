"""Error taxonomy shared by all twinsec modules.

Every error a caller is expected to branch on has its own class; the
service layer maps these onto HTTP status codes and CLI exit codes.
"""


class TwinSecError(Exception):
    """Base class for all twinsec errors."""


# --- plant ------------------------------------------------------------

class UnknownActuator(TwinSecError):
    """Command targets an actuator id that is not registered."""


class NonFiniteCommand(TwinSecError):
    """Command carries a NaN or infinite setpoint."""


class SlotOccupied(TwinSecError):
    """Station-A loading slot already holds an object (spacing violation)."""


class UnknownSensor(TwinSecError):
    """Sensor id is not registered with the plant."""


class TraceParse(TwinSecError):
    """A trace file or record could not be parsed."""


# --- icm --------------------------------------------------------------

class SensorMismatch(TwinSecError):
    """Reading and calibration record reference different sensors."""


class UnknownReference(TwinSecError):
    """A referenced asset/sensor/rule id does not exist."""


class SpecFormatError(TwinSecError):
    """Specification file violates the documented schema."""


# --- rules ------------------------------------------------------------

class Unauthorized(TwinSecError):
    """Principal lacks the role required for the attempted action."""


class UnknownRule(TwinSecError):
    """Rule id not found."""


class MalformedPredicate(TwinSecError):
    """Rule predicate violates the predicate-language invariants."""


class MissingSignal(TwinSecError):
    """Snapshot lacks a value for an id the predicate references."""


# --- ledger -----------------------------------------------------------

class EmptyBatch(TwinSecError):
    """append() called with no entries."""


class ChainFormatError(TwinSecError):
    """Chain file bytes do not parse as the documented format."""


class LedgerUnavailable(TwinSecError):
    """No ledger handle available for an operation that requires one."""


# --- twin -------------------------------------------------------------

class InvalidSpec(TwinSecError):
    """Twin generation refused: the engineering spec has findings."""


class ConfigInvalid(TwinSecError):
    """TwinConfig violates its invariants."""


class SetpointOutOfBounds(TwinSecError):
    """Setpoint rejected by its configured bounds."""


class NotTunable(TwinSecError):
    """tune_and_rerun called on a run that produced no incident."""


class CalibrationGap(TwinSecError):
    """Replication input references a sensor with no calibration record."""


# --- verify -----------------------------------------------------------

class BudgetExceeded(TwinSecError):
    """Bounded exploration would exceed the configured state budget."""


# --- service ----------------------------------------------------------

class SessionExpired(TwinSecError):
    """Session context past its expiry."""


class NotFound(TwinSecError):
    """Requested resource does not exist."""
