"""Exception hierarchy shared by every fedgen module."""


class FedGenError(Exception):
    """Base class for all library errors."""


class ConfigError(FedGenError, ValueError):
    """Invalid shape, size or configuration value."""


class ContractViolation(FedGenError, ValueError):
    """A caller broke an operation's precondition (wrong dimension, empty input, ...)."""


class TrainingDiverged(FedGenError, RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}, step {step} (loss={loss})")


class MalformedMessage(FedGenError, ValueError):
    """A wire frame could not be decoded."""


class ProtocolError(FedGenError, RuntimeError):
    """A federation run reached an impossible protocol state."""
