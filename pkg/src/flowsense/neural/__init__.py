"""Small deterministic float64 tensor engine with reverse-mode gradients."""

from . import tensor as ops
from .archive import ArchiveError, load_tensors, loads_tensors, dumps_tensors, save_tensors
from .gradcheck import grad_check, relative_error
from .init import glorot_uniform
from .optim import AdamState, adam_step
from .tensor import RULES, ShapeError, Tape, Tensor, backward

__all__ = [
    "ops", "Tape", "Tensor", "backward", "RULES", "ShapeError",
    "AdamState", "adam_step", "grad_check", "relative_error", "glorot_uniform",
    "save_tensors", "load_tensors", "dumps_tensors", "loads_tensors", "ArchiveError",
]
