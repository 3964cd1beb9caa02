"""Gradient-clipped adaptive-moment optimizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingDivergenceError
from .nn import Params


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Params, max_norm: float | None):
    """Scale all gradients so their joint norm is at most ``max_norm``.

    Returns the (possibly rescaled) gradients and the pre-clip norm.
    """
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float | None = 1.0


class Adam:
    """Adaptive-moment updates with global-norm gradient clipping.

    Deterministic given inputs; a zero gradient leaves the parameters
    bit-identical because the bias-corrected moments stay zero.
    """

    def __init__(self, params: Params, config: AdamConfig | None = None):
        self.config = config or AdamConfig()
        self.count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise TrainingDivergenceError(f"non-finite gradient for parameter {name!r}")
        cfg = self.config
        grads, _ = clip_by_global_norm(grads, cfg.clip)
        self.count += 1
        b1c = 1.0 - cfg.beta1 ** self.count
        b2c = 1.0 - cfg.beta2 ** self.count
        for name, grad in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * grad * grad
            params[name] -= cfg.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)
