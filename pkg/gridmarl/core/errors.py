"""
Exception hierarchy. Each error carries a category and the CLI exit code it maps to.
"""


class GridMarlError(Exception):
    """Base class for all toolkit errors."""

    category = "internal"
    exit_code = 1


class ConfigurationError(GridMarlError):
    """Invalid scenario, feeder or profile data.

    Args:
        message: What is wrong
        path: Optional location inside the config, e.g. ``agents[1].bus``
    """

    category = "config"
    exit_code = 2

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ContractViolation(GridMarlError):
    category = "contract"
    exit_code = 3


class PowerFlowError(GridMarlError):
    category = "powerflow"
    exit_code = 4


class NonFiniteError(GridMarlError):
    category = "numeric"
    exit_code = 5


class CheckpointError(GridMarlError):
    category = "checkpoint"
    exit_code = 6


class TrainingDivergence(GridMarlError):
    category = "training"
    exit_code = 7
