"""Dense float64 tensors, reverse-mode differentiation and the matrix exponential."""

from . import ops
from .gradcheck import gradcheck, relative_error
from .ops import (
    absolute,
    dropout,
    expm,
    expm_array,
    layer_norm,
    log_sigmoid,
    masked,
    matmul,
    relu,
    softmax_rows,
    take_rows,
    trace,
    transpose,
)
from .tensor import FLOAT, Tape, Tensor, active_tape, as_tensor, backward, record

__all__ = [
    "FLOAT",
    "Tape",
    "Tensor",
    "absolute",
    "active_tape",
    "as_tensor",
    "backward",
    "dropout",
    "expm",
    "expm_array",
    "gradcheck",
    "layer_norm",
    "log_sigmoid",
    "masked",
    "matmul",
    "ops",
    "record",
    "relative_error",
    "relu",
    "softmax_rows",
    "take_rows",
    "trace",
    "transpose",
]
