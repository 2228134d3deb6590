"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from lowlight import ops
from lowlight.tensor import Tensor, backward, no_grad


def _scalarize(out: Tensor | Sequence[Tensor], probes: list[np.ndarray]) -> Tensor:
    outs = [out] if isinstance(out, Tensor) else list(out)
    total = None
    for o, r in zip(outs, probes):
        term = ops.reduce_sum(ops.mul(o, Tensor(r, dtype=o.dtype))) if o.data.ndim == 4 else _dot(o, r)
        total = term if total is None else total + term
    return total


def _dot(o: Tensor, r: np.ndarray) -> Tensor:
    # non-NCHW outputs (stats, scalars): lift to 4-d so mul's shape rules apply
    lifted = Tensor._from_op(o.data.reshape(1, 1, 1, -1), "reshape", (o,), lambda g: (g.reshape(o.shape),))
    return ops.reduce_sum(ops.mul(lifted, Tensor(r.reshape(1, 1, 1, -1), dtype=o.dtype)))


def numerical_gradient(f: Callable[[], float], x: Tensor, eps: float) -> np.ndarray:
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |n|, max |a|): an inf-norm relative error."""
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(
    fn: Callable[..., Tensor | Sequence[Tensor]],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Compare backward() against central differences for each input.

    Multi-element outputs are reduced with a fixed random projection so
    every output element contributes. Returns one relative error per input.
    """
    rng = np.random.default_rng(seed)
    with no_grad():
        sample = fn(*inputs)
    samples = [sample] if isinstance(sample, Tensor) else list(sample)
    probes = [rng.uniform(-1, 1, s.shape) for s in samples]

    for t in inputs:
        t.grad = None
    backward(_scalarize(fn(*inputs), probes))
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs]

    def objective() -> float:
        with no_grad():
            return float(_scalarize(fn(*inputs), probes).data)

    errors = []
    for t, a in zip(inputs, analytic):
        errors.append(relative_error(a, numerical_gradient(objective, t, eps)))
    return errors
