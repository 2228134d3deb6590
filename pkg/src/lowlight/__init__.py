"""Unsupervised two-stage low-light enhancement on a small numpy autodiff engine."""

from lowlight.tensor import ShapeError, Tensor, UsageError, backward, no_grad

__all__ = ["ShapeError", "Tensor", "UsageError", "backward", "no_grad"]
__version__ = "0.1.0"
