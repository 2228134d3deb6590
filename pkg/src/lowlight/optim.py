"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from lowlight.tensor import Tensor, UsageError


@dataclass
class AdamState:
    """First/second moments aligned with a fixed parameter list, plus the step count."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            t=0,
        )


def adam_step(
    params: Sequence[Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update. Gradients are left for the caller to clear."""
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise UsageError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    if len(state.m) != len(params):
        raise UsageError(f"optimizer state tracks {len(state.m)} tensors, got {len(params)} parameters")
    for i, p in enumerate(params):
        if p.grad is None:
            raise UsageError(f"parameter {i} with shape {p.shape} has no gradient")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        dt = p.data.dtype.type
        m *= dt(beta1)
        m += dt(1.0 - beta1) * g
        v *= dt(beta2)
        v += dt(1.0 - beta2) * (g * g)
        m_hat = m / dt(c1)
        v_hat = v / dt(c2)
        p.data -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))
