"""Process and measurement noise covariance construction.

The process covariance acts on the pose only: its top-left 3x3 block is
``sigma_w2 * diag(q2, q2, 1)`` and every landmark row/column is zero. The
measurement covariance is block diagonal with one ``sigma_v2 * diag(r2, 1)``
block per landmark, i.e. ``I_M (kron) D_R``. ``q2`` and ``r2`` control the
heterogeneity between position/heading and range/bearing noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import measurement_dim, state_dim


@dataclass(frozen=True, slots=True)
class NoiseConfig:
    """Noise scales for one scenario.

    ``sigma_w2``/``sigma_v2`` may be zero to build degenerate (noise-free)
    diagnostic datasets; the heterogeneity factors must be positive.
    """

    sigma_w2: float
    sigma_v2: float
    q2: float
    r2: float

    def __post_init__(self):
        vals = (self.sigma_w2, self.sigma_v2, self.q2, self.r2)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("noise parameters must be finite")
        if self.sigma_w2 < 0 or self.sigma_v2 < 0:
            raise ValueError("variance scales must be non-negative")
        if self.q2 <= 0 or self.r2 <= 0:
            raise ValueError("heterogeneity factors must be strictly positive")


def process_block(cfg: NoiseConfig) -> np.ndarray:
    """The 3x3 pose block of the process covariance."""
    return cfg.sigma_w2 * np.diag([cfg.q2, cfg.q2, 1.0])


def measurement_block(cfg: NoiseConfig) -> np.ndarray:
    """The 2x2 per-landmark block of the measurement covariance."""
    return cfg.sigma_v2 * np.diag([cfg.r2, 1.0])


def build_Q(cfg: NoiseConfig, num_landmarks: int) -> np.ndarray:
    """Full process covariance over the (3 + 2M)-dimensional state."""
    n = state_dim(num_landmarks)
    q = np.zeros((n, n))
    q[:3, :3] = process_block(cfg)
    return q


def build_R(cfg: NoiseConfig, num_landmarks: int) -> np.ndarray:
    """Full measurement covariance over the 2M interleaved measurements."""
    diag = np.tile([cfg.r2, 1.0], num_landmarks) * cfg.sigma_v2
    out = np.zeros((measurement_dim(num_landmarks),) * 2)
    np.fill_diagonal(out, diag)
    return out


def process_noise_stds(cfg: NoiseConfig) -> np.ndarray:
    """Standard deviations of the pose process noise ``(w_x, w_y, w_theta)``."""
    return np.sqrt(np.diag(process_block(cfg)))


def measurement_noise_stds(cfg: NoiseConfig, num_landmarks: int) -> np.ndarray:
    """Standard deviations of the interleaved measurement noise."""
    return np.sqrt(np.tile([cfg.r2, 1.0], num_landmarks) * cfg.sigma_v2)
