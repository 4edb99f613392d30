# common/errors.py
"""Error hierarchy shared by the perception, simulation and pipeline packages."""

# Integer codes, one per failure family.
PARAMETER_ERROR_CODE = -32010
DEGENERATE_GEOMETRY_CODE = -32011
EMPTY_PATCH_CODE = -32012
INSUFFICIENT_BOOTSTRAP_CODE = -32013
INSUFFICIENT_GROUND_TRUTH_CODE = -32014
DEGENERATE_WEIGHTS_CODE = -32015
NO_REFERENCE_CODE = -32016
EMPTY_OBSTACLE_CODE = -32017
EMPTY_CELL_CODE = -32018
NUMERIC_ERROR_CODE = -32019
CONFIGURATION_ERROR_CODE = -32020
INSUFFICIENT_TRAINING_CODE = -32021
STAGE_ERROR_CODE = -32030


class PerceptionError(Exception):
    """Base class; every subclass carries an integer `code`."""
    code: int = -32000

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


class ParameterError(PerceptionError, ValueError):
    code = PARAMETER_ERROR_CODE


class DegenerateGeometryError(PerceptionError):
    code = DEGENERATE_GEOMETRY_CODE


class EmptyPatchError(PerceptionError):
    code = EMPTY_PATCH_CODE


class InsufficientBootstrapError(PerceptionError):
    code = INSUFFICIENT_BOOTSTRAP_CODE


class InsufficientGroundTruthError(PerceptionError):
    code = INSUFFICIENT_GROUND_TRUTH_CODE


class DegenerateWeightsError(PerceptionError):
    code = DEGENERATE_WEIGHTS_CODE


class NoReferenceError(PerceptionError):
    code = NO_REFERENCE_CODE


class EmptyObstacleError(PerceptionError):
    code = EMPTY_OBSTACLE_CODE


class EmptyCellError(PerceptionError):
    code = EMPTY_CELL_CODE


class NumericError(PerceptionError):
    code = NUMERIC_ERROR_CODE


class ConfigurationError(PerceptionError):
    code = CONFIGURATION_ERROR_CODE


class InsufficientTrainingError(PerceptionError):
    code = INSUFFICIENT_TRAINING_CODE


class StageError(PerceptionError):
    """Wraps a module error with the pipeline stage it came from."""
    code = STAGE_ERROR_CODE

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
