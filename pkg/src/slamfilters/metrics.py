"""Estimation-error metric: mean squared error in decibels.

The score is ``10*log10`` of the squared state error averaged over every
step of every trajectory; the spread is the standard deviation of the
per-trajectory dB scores. Angular state components enter through wrapped
differences so an estimate on the other side of the +-pi seam is charged
its true small error, not ~2*pi.
"""

from __future__ import annotations

import numpy as np

from .geometry import wrap_angle


class Perfect:
    """Sentinel for a numerically-zero total error (in place of -inf dB)."""

    def __repr__(self) -> str:
        return "perfect"

    def __str__(self) -> str:
        return "perfect"


PERFECT = Perfect()

# Mean squared errors at or below this are indistinguishable from exact
# recovery in float64 filtering and are reported as PERFECT.
PERFECT_FLOOR = 1e-24


def squared_state_errors(true_states: np.ndarray, estimates: np.ndarray,
                         angle_indices=(2,)) -> np.ndarray:
    """Per-sample squared error with wrapped angular components."""
    true_states = np.asarray(true_states, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if true_states.shape != estimates.shape:
        raise ValueError(
            f"shape mismatch: {true_states.shape} vs {estimates.shape}")
    diff = estimates - true_states
    idx = list(angle_indices)
    if idx:
        diff[..., idx] = wrap_angle(diff[..., idx])
    return np.sum(diff * diff, axis=-1)


def per_trajectory_mse(true_states: np.ndarray, estimates: np.ndarray,
                       angle_indices=(2,)) -> np.ndarray:
    """Mean squared error of each trajectory, shape (L,)."""
    sq = squared_state_errors(true_states, estimates, angle_indices)
    if sq.ndim == 1:
        sq = sq[None, :]
    return sq.mean(axis=-1)


def mse_db(true_states: np.ndarray, estimates: np.ndarray, angle_indices=(2,)):
    """``(mu, sigma)``: overall MSE in dB and the per-trajectory dB spread.

    Returns ``(PERFECT, 0.0)`` when the total error is numerically zero.
    """
    traj_mse = per_trajectory_mse(true_states, estimates, angle_indices)
    total = float(traj_mse.mean())
    if total <= PERFECT_FLOOR:
        return PERFECT, 0.0
    mu = 10.0 * np.log10(total)
    per_db = 10.0 * np.log10(np.maximum(traj_mse, PERFECT_FLOOR))
    sigma = float(np.std(per_db, ddof=1)) if len(per_db) > 1 else 0.0
    return float(mu), sigma
