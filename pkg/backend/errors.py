"""
Error types for the federated reproducibility workbench.
Every error carries the process exit code the CLI returns for it.
"""


class WorkbenchError(Exception):
    """Base class for all workbench failures"""
    exit_code = 1


class UsageError(WorkbenchError):
    """Invalid configuration or command-line usage"""
    exit_code = 2

    def __init__(self, message: str, field: str = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DataFormatError(WorkbenchError):
    """Malformed input files or datasets"""
    exit_code = 3


class PartitionError(DataFormatError):
    """Dataset too small or unbalanced to split into hospitals and folds"""


class TrainingError(WorkbenchError):
    """Training diverged (non-finite loss)"""
    exit_code = 4

    def __init__(self, message: str, sample_index: int = None):
        self.sample_index = sample_index
        super().__init__(message)


class ReportIOError(WorkbenchError):
    """Result or report files could not be read or written"""
    exit_code = 5


# Library argument errors; also ValueErrors so plain callers can catch them

class DimensionError(WorkbenchError, ValueError):
    exit_code = 2


class DomainError(WorkbenchError, ValueError):
    exit_code = 2


class ParameterError(WorkbenchError, ValueError):
    exit_code = 2


class PreconditionError(WorkbenchError, ValueError):
    exit_code = 2


class AggregationError(WorkbenchError, ValueError):
    exit_code = 4


class GradientCheckError(WorkbenchError, ValueError):
    exit_code = 4
