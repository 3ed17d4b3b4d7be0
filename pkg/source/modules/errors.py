from __future__ import annotations

from modules.enums import ExitCode


class SensingError(Exception):
    exit_code = ExitCode.DATA


class ParameterError(SensingError, ValueError):
    exit_code = ExitCode.USAGE


class GeometryError(SensingError, ValueError):
    exit_code = ExitCode.USAGE


class UsageError(SensingError):
    exit_code = ExitCode.USAGE


class DetectionError(SensingError):
    """No usable direct waves were found in a recording."""

    def __init__(self, message: str, peak_values=None):
        super().__init__(message)
        self.peak_values = peak_values


class SegmentationError(SensingError):
    def __init__(self, message: str, cycle: int | None = None):
        super().__init__(message)
        self.cycle = cycle


class SimulationError(SensingError):
    pass


class DataError(SensingError):
    pass


class LeakageError(SensingError):
    pass


class DegenerateInputError(SensingError):
    exit_code = ExitCode.NUMERICAL

    def __init__(self, message: str, cycle: int | None = None):
        super().__init__(message)
        self.cycle = cycle


class TrainingError(SensingError):
    exit_code = ExitCode.NUMERICAL
