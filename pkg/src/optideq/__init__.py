"""Numpy digital twin of an analog optical deep-equilibrium classifier for tabular data.

The main entry points are re-exported here. Submodules hold the details:
``cells`` (ideal and impaired optical cell), ``deq`` (fixed-point ensemble),
``training`` (implicit gradients, Adam), ``baselines``, ``encoding``,
``splitter``, ``evalkit``, ``pipeline`` and ``cli``.
"""

from optideq.cells import CellSpec, cell_apply, quantize_weights
from optideq.deq import (
    DeqBlockParams,
    EnsembleModel,
    ModelConfig,
    count_parameters,
    forward,
    init_ensemble,
    parameter_count,
    solve_fixed_point,
)
from optideq.errors import (
    ConfigurationError,
    EncodingError,
    NumericError,
    OptiDeqError,
    SplitError,
    StageError,
    TrainingError,
)
from optideq.training import TrainConfig, train

__all__ = [
    "CellSpec", "cell_apply", "quantize_weights",
    "DeqBlockParams", "EnsembleModel", "ModelConfig", "count_parameters", "forward",
    "init_ensemble", "parameter_count", "solve_fixed_point",
    "ConfigurationError", "EncodingError", "NumericError", "OptiDeqError", "SplitError",
    "StageError", "TrainingError", "TrainConfig", "train",
]
