"""Haze-aware attention dehazing network on a small numpy autodiff core."""

from .tensor import Tape, Tensor, backward, finite_diff_check

__all__ = ["Tape", "Tensor", "backward", "finite_diff_check"]
__version__ = "0.1.0"
