"""Planar range-bearing SLAM dynamics.

The flat state vector is ``[x, y, theta, x1, y1, ..., xM, yM]`` (agent pose
followed by M landmark positions). Measurements are interleaved
``[r1, phi1, ..., rM, phiM]`` with bearings relative to the agent heading.
All functions operate on float64 arrays and broadcast over leading batch
dimensions unless noted otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError

POSE_DIM = 3
TWO_PI = 2.0 * np.pi


def state_dim(num_landmarks: int) -> int:
    """Length of the flat state vector for ``num_landmarks`` landmarks."""
    return POSE_DIM + 2 * num_landmarks


def measurement_dim(num_landmarks: int) -> int:
    """Length of the interleaved range-bearing measurement vector."""
    return 2 * num_landmarks


def landmark_count(dim: int) -> int:
    """Number of landmarks encoded in a state vector of length ``dim``."""
    m, rem = divmod(dim - POSE_DIM, 2)
    if m < 1 or rem:
        raise ValueError(f"state length {dim} is not 3 + 2M with M >= 1")
    return m


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to the half-open interval [-pi, pi)."""
    a = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("angle must be finite")
    wrapped = np.mod(a + np.pi, TWO_PI) - np.pi
    # fp rounding in mod can land exactly on +pi; fold it onto the open bound
    wrapped = np.where(wrapped >= np.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


def wrap_indexed(vec: np.ndarray, indices) -> np.ndarray:
    """Return a copy of ``vec`` with the given trailing-axis entries wrapped."""
    out = np.array(vec, dtype=float, copy=True)
    if len(indices):
        out[..., indices] = wrap_angle(out[..., indices])
    return out


@dataclass(slots=True)
class Pose:
    """Agent pose; ``theta`` is stored wrapped to [-pi, pi)."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        self.theta = wrap_angle(self.theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


@dataclass(slots=True)
class MotionInput:
    """One step of control: speed ``v`` (m/s) and heading increment ``dtheta``.

    The sampling interval is fixed at one second, so ``v`` doubles as the
    per-step travel distance.
    """

    v: float
    dtheta: float

    def __post_init__(self):
        if not (np.isfinite(self.v) and np.isfinite(self.dtheta)):
            raise ValueError("motion input must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.dtheta], dtype=float)


@dataclass(slots=True)
class StateVector:
    """Agent pose plus an ordered bank of landmark positions.

    Landmark order is the identity used for data association and is fixed
    for the lifetime of a scenario.
    """

    pose: Pose
    landmarks: np.ndarray  # (M, 2)

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=float)
        if self.landmarks.ndim != 2 or self.landmarks.shape[1] != 2 or len(self.landmarks) < 1:
            raise ValueError("landmarks must be an (M, 2) array with M >= 1")

    @property
    def num_landmarks(self) -> int:
        return len(self.landmarks)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.pose.as_array(), self.landmarks.ravel()])

    @classmethod
    def from_array(cls, state: np.ndarray) -> "StateVector":
        state = np.asarray(state, dtype=float)
        m = landmark_count(state.shape[-1])
        return cls(Pose(*state[:3]), state[3:].reshape(m, 2).copy())


def _control_arrays(control):
    """Normalize a control (MotionInput, pair, or (..., 2) array) to (v, dtheta)."""
    if isinstance(control, MotionInput):
        return np.float64(control.v), np.float64(control.dtheta)
    arr = np.asarray(control, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError(f"control must have a trailing dimension of 2, got {arr.shape}")
    return arr[..., 0], arr[..., 1]


def motion_step(state: np.ndarray, control, noise=None) -> np.ndarray:
    """Advance the agent pose one step; landmarks are static.

    ``noise`` is the per-step process perturbation ``(w_x, w_y, w_theta)``
    (landmark entries receive none). The new heading is wrapped.
    """
    state = np.asarray(state, dtype=float)
    landmark_count(state.shape[-1])  # validates layout
    v, dtheta = _control_arrays(control)
    if noise is None:
        wx = wy = wth = 0.0
    else:
        noise = np.asarray(noise, dtype=float)
        if noise.shape[-1] != 3:
            raise ValueError(f"noise must have a trailing dimension of 3, got {noise.shape}")
        if not np.all(np.isfinite(noise)):
            raise ValueError("noise must be finite")
        wx, wy, wth = noise[..., 0], noise[..., 1], noise[..., 2]
    theta = state[..., 2]
    out = np.array(state, copy=True)
    out[..., 0] = state[..., 0] + v * np.cos(theta) + wx
    out[..., 1] = state[..., 1] + v * np.sin(theta) + wy
    out[..., 2] = wrap_angle(theta + dtheta + wth)
    return out


def _landmark_offsets(state: np.ndarray):
    """Per-landmark (dx, dy, r) from the agent, batched over leading dims."""
    m = landmark_count(state.shape[-1])
    lm = state[..., 3:].reshape(state.shape[:-1] + (m, 2))
    dx = lm[..., 0] - state[..., 0:1]
    dy = lm[..., 1] - state[..., 1:2]
    r = np.hypot(dx, dy)
    return dx, dy, r


def measure(state: np.ndarray) -> np.ndarray:
    """Noise-free interleaved range-bearing measurement of every landmark."""
    state = np.asarray(state, dtype=float)
    dx, dy, r = _landmark_offsets(state)
    if np.any(r == 0.0):
        raise DegenerateGeometryError("agent coincides with a landmark; bearing undefined")
    phi = wrap_angle(np.arctan2(dy, dx) - state[..., 2:3])
    out = np.stack([r, phi], axis=-1)
    return out.reshape(state.shape[:-1] + (2 * r.shape[-1],))


def jacobian_f(state: np.ndarray, control) -> np.ndarray:
    """Jacobian of the motion step with respect to the state.

    Identity except for the pose block's heading column.
    """
    state = np.asarray(state, dtype=float)
    if state.ndim != 1:
        raise ValueError("jacobian_f expects a single flat state vector")
    v, _ = _control_arrays(control)
    n = state.shape[0]
    landmark_count(n)
    jac = np.eye(n)
    theta = state[2]
    jac[0, 2] = -v * np.sin(theta)
    jac[1, 2] = v * np.cos(theta)
    return jac


def jacobian_h(state: np.ndarray) -> np.ndarray:
    """Jacobian of the range-bearing measurement, shape (..., 2M, 3+2M)."""
    state = np.asarray(state, dtype=float)
    m = landmark_count(state.shape[-1])
    dx, dy, r = _landmark_offsets(state)
    if np.any(r == 0.0):
        raise DegenerateGeometryError("agent coincides with a landmark; Jacobian undefined")
    r2 = r * r
    n = state.shape[-1]
    jac = np.zeros(state.shape[:-1] + (2 * m, n))
    rows_r = 2 * np.arange(m)
    rows_b = rows_r + 1
    cols_x = 3 + 2 * np.arange(m)
    cols_y = cols_x + 1
    jac[..., rows_r, 0] = -dx / r
    jac[..., rows_r, 1] = -dy / r
    jac[..., rows_r, cols_x] = dx / r
    jac[..., rows_r, cols_y] = dy / r
    jac[..., rows_b, 0] = dy / r2
    jac[..., rows_b, 1] = -dx / r2
    jac[..., rows_b, 2] = -1.0
    jac[..., rows_b, cols_x] = -dy / r2
    jac[..., rows_b, cols_y] = dx / r2
    return jac


def inverse_observation(pose, r, phi) -> np.ndarray:
    """Landmark position implied by a range-bearing measurement from ``pose``."""
    if isinstance(pose, Pose):
        pose = pose.as_array()
    pose = np.asarray(pose, dtype=float)
    if pose.shape[-1] != 3:
        raise ValueError(f"pose must have a trailing dimension of 3, got {pose.shape}")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("range must be strictly positive")
    heading = pose[..., 2] + np.asarray(phi, dtype=float)
    x = pose[..., 0] + r * np.cos(heading)
    y = pose[..., 1] + r * np.sin(heading)
    return np.stack([x, y], axis=-1)
