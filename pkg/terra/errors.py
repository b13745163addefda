"""
Exception and warning types shared across the toolkit.
"""


class TerraError(Exception):
    """Base class for all toolkit errors"""


class ConfigError(TerraError):
    """Invalid or inconsistent run configuration"""


class SinkageError(TerraError):
    """Static sinkage could not balance the requested load"""


class DegenerateKinematicsError(TerraError, ValueError):
    """Speed too low for slip quantities to be defined"""


class ModelFileError(TerraError):
    """Model file could not be read"""


class ModelVersionError(ModelFileError):
    """Model file was written by an incompatible format version"""


class CorruptModelError(ModelFileError):
    """Model file is truncated or structurally invalid"""


class TrainingDivergedError(TerraError):
    """Every ensemble member diverged during training"""


class FilterError(TerraError):
    """Fatal filter failure; carries the estimate trace up to the failure"""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class SimulationBlowUpError(TerraError):
    """Plant state left its physical envelope; carries the partial log"""

    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


class ReportInputError(TerraError):
    """Inputs required for a report are missing or empty"""


class DataQualityWarning(UserWarning):
    """Generated data needed more repair than expected"""


class ExtrapolationWarning(UserWarning):
    """Surrogate evaluated outside its training bounds"""
