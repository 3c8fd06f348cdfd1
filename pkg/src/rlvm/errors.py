"""Exception hierarchy for the simulator.

Every family carries the exit code the CLI returns for it:

    UsageError       2   bad arguments, unknown methods, corrupt model files
    TraceError       3   trace / request input problems
    SimulationError  4   slot range and placement constraint breaches
    TrainingError    5   PPO failures

Library code raises; only ``rlvm.cli`` turns these into exit codes.
"""

from typing import Optional


class RlvmError(Exception):
    """Base class for all simulator errors."""

    exit_code: int = 1


class UsageError(RlvmError):
    """Invalid arguments or configuration."""

    exit_code = 2


class ModelFormatError(UsageError):
    """A policy model file could not be parsed or has the wrong shapes."""


class TraceError(RlvmError):
    """Problems with workload traces or request files."""

    exit_code = 3


class MissingFile(TraceError):
    """A trace or request file does not exist."""

    def __init__(self, path: str):
        super().__init__(f"File not found: {path}")
        self.path = path


class MalformedRow(TraceError):
    """A data row has the wrong column count or a non-numeric field."""

    def __init__(self, row_index: int, reason: str):
        super().__init__(f"Malformed row {row_index}: {reason}")
        self.row_index = row_index
        self.reason = reason


class InvariantViolation(TraceError):
    """A record or profile breaks one of its value invariants."""


class InsufficientVMs(TraceError):
    """Fewer per-VM traces are available than the request asks for."""


class ShortTrace(TraceError):
    """A sampled VM does not cover the requested slot window."""

    def __init__(self, vm_id: str, detail: str = ""):
        message = f"Trace of VM {vm_id} is too short for the requested window"
        if detail:
            message += f" ({detail})"
        super().__init__(message)
        self.vm_id = vm_id


class InvalidSpec(TraceError):
    """A synthetic workload description is not usable."""


class SimulationError(RlvmError):
    """Errors raised while advancing the cluster."""

    exit_code = 4


class SlotOutOfRange(SimulationError):
    """A slot index lies outside the episode."""

    def __init__(self, slot: int, slot_count: int):
        super().__init__(f"Slot {slot} out of range [0, {slot_count})")
        self.slot = slot
        self.slot_count = slot_count


class ConstraintViolation(SimulationError):
    """A migration set or placement result breaks a selection/placement constraint."""

    def __init__(self, detail: str, slot: Optional[int] = None, host: Optional[int] = None):
        context = []
        if slot is not None:
            context.append(f"slot={slot}")
        if host is not None:
            context.append(f"host={host}")
        prefix = f"[{', '.join(context)}] " if context else ""
        super().__init__(prefix + detail)
        self.detail = detail
        self.slot = slot
        self.host = host


class TrainingError(RlvmError):
    """Errors raised by the PPO trainer."""

    exit_code = 5


class IncompleteTrajectory(TrainingError):
    """A trajectory did not reach the terminal slot or has inconsistent lengths."""


class NonFiniteGradient(TrainingError):
    """A gradient or loss became NaN/inf; the update is aborted."""

    def __init__(self, step: int, where: str = "policy"):
        super().__init__(f"Non-finite {where} gradient at update step {step}")
        self.step = step
        self.where = where
