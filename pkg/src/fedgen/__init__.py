"""Simulator for prompt-transmitting federated learning versus FedAvg."""

from .errors import (
    ConfigError,
    ContractViolation,
    FedGenError,
    MalformedMessage,
    ProtocolError,
    TrainingDiverged,
)

__version__ = "0.1.0"
