"""Exception hierarchy shared by all modules."""


class RlvmError(Exception):
    """Base class for every error raised by this package."""


class DataError(RlvmError):
    """Bad or insufficient input data (traces, request files)."""


class MissingFile(DataError, FileNotFoundError):
    pass


class MalformedRow(DataError):
    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class InvariantViolation(DataError):
    pass


class InsufficientVMs(DataError):
    pass


class ShortTrace(DataError):
    def __init__(self, vm_id, have, need):
        self.vm_id = vm_id
        super().__init__(f"trace for VM {vm_id!r} has {have} samples in window, needs {need}")


class InvalidSpec(RlvmError, ValueError):
    pass


class ConfigError(RlvmError, ValueError):
    pass


class SimulationError(RlvmError):
    """Raised when the simulator is driven outside its contract."""


class SlotOutOfRange(SimulationError, IndexError):
    pass


class ConstraintViolation(SimulationError):
    pass


class PreconditionError(RlvmError, ValueError):
    pass


class TrainingError(RlvmError):
    pass


class IncompleteTrajectory(TrainingError):
    pass


class NonFiniteGradient(TrainingError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite gradient at update step {step}")


class ModelFormatError(RlvmError):
    pass
