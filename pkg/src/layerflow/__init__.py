"""Layered implicit video representations for frame interpolation."""

from ._backend import backend_name
from .tensor import Tape, Tensor, apply_op, backward

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backward", "apply_op", "backend_name", "__version__"]
