"""Exception hierarchy for the LFQ simulation laboratory."""

from typing import Optional


class LfqError(Exception):
    """Base exception for all LFQ errors."""
    pass


class ConfigurationError(LfqError):
    """Exception for configuration and flag related errors."""
    pass


class SimulationError(LfqError):
    """Exception for contract violations inside the event engine."""
    def __init__(self, message: str, sim_time: Optional[float] = None):
        super().__init__(message)
        self.sim_time = sim_time


class ModelError(LfqError):
    """Exception for non-finite network outputs or gradients."""
    def __init__(self, message: str, layer: Optional[int] = None):
        super().__init__(message)
        self.layer = layer


class WeightFormatError(LfqError):
    """Exception for unreadable or mismatching weight files."""
    def __init__(self, message: str, path: Optional[str] = None,
                 layer: Optional[int] = None):
        super().__init__(message)
        self.path = path
        self.layer = layer


class TrainingError(LfqError):
    """Exception raised when a training batch has to be voided."""
    def __init__(self, message: str, batch_index: Optional[int] = None):
        super().__init__(message)
        self.batch_index = batch_index
