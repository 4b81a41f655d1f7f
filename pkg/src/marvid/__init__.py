"""Desk-scale video representation learning on a numpy autodiff core.

The package builds up in layers: a reverse-mode tape over float64 numpy
arrays (tensor), neural building blocks including an input-dependent
state-space scan (layers), a hybrid scan/attention video encoder (backbone),
masked autoregressive feature-alignment pretraining against a frozen teacher
(pretrain), classifier finetuning (finetune), synthetic bouncing-sprite
datasets (data), binary checkpoint and dataset formats (checkpoint, data),
and an analytic compute/memory cost model (costs).  The marvid console
script drives the whole pipeline.
"""

from .errors import (
    CheckpointError, ConfigError, ContractError, DataError, FormatError,
    InvalidShape, MarvidError, NumericError, PlanError, RangeError,
    ShapeError, SpecError,
)
from .rng import Rng
from .tensor import Tensor, Tape, backward, create, tape

__all__ = [
    "CheckpointError", "ConfigError", "ContractError", "DataError",
    "FormatError", "InvalidShape", "MarvidError", "NumericError",
    "PlanError", "RangeError", "ShapeError", "SpecError",
    "Rng", "Tensor", "Tape", "backward", "create", "tape",
]
