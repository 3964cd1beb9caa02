"""Extended Kalman filtering over pluggable system models.

The recursion is the textbook predict/update pair with explicit covariance
propagation. Angular components (the agent heading in the state, bearings in
the measurement) are wrapped wherever a difference of angles is formed, so
estimates never jump by 2*pi near the wrap boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from . import geometry
from .errors import FilterDivergenceError, IllConditionedError
from .geometry import (
    jacobian_f,
    jacobian_h,
    measure,
    measurement_dim,
    motion_step,
    state_dim,
    wrap_angle,
)
from .noise import NoiseConfig, build_Q, build_R

PSD_TOLERANCE = 1e-9

# Predetermined model parameters for the mismatched EKF baseline: these are
# assumed regardless of the data-generating truth.
MISMATCH_NOISE = NoiseConfig(sigma_w2=1e-3, sigma_v2=1e-3, q2=10.0, r2=100.0)


@dataclass(frozen=True)
class SystemModel:
    """Deterministic dynamics shared by all estimators.

    The callables must accept flat state vectors and broadcast over leading
    batch dimensions. ``angle_states``/``angle_measurements`` list the vector
    entries that live on the circle and need wrapping when differenced.
    """

    state_dim: int
    measurement_dim: int
    motion: Callable
    measurement: Callable
    measurement_jacobian: Callable
    angle_states: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    angle_measurements: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    def wrap_state(self, x: np.ndarray) -> np.ndarray:
        return geometry.wrap_indexed(x, self.angle_states)

    def state_diff(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return geometry.wrap_indexed(a - b, self.angle_states)

    def measurement_diff(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return geometry.wrap_indexed(a - b, self.angle_measurements)


@dataclass(frozen=True)
class FilterModel:
    """A system model plus the statistics an EKF assumes about it."""

    system: SystemModel
    motion_jacobian: Callable
    Q: np.ndarray
    R: np.ndarray
    condition_cap: float = 1e12


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy())


def slam_system(num_landmarks: int) -> SystemModel:
    """The range-bearing landmark system with M landmarks."""
    return SystemModel(
        state_dim=state_dim(num_landmarks),
        measurement_dim=measurement_dim(num_landmarks),
        motion=motion_step,
        measurement=measure,
        measurement_jacobian=jacobian_h,
        angle_states=np.array([2], dtype=int),
        angle_measurements=np.arange(1, 2 * num_landmarks, 2),
    )


def slam_filter_model(noise: NoiseConfig, num_landmarks: int,
                      condition_cap: float = 1e12) -> FilterModel:
    return FilterModel(
        system=slam_system(num_landmarks),
        motion_jacobian=jacobian_f,
        Q=build_Q(noise, num_landmarks),
        R=build_R(noise, num_landmarks),
        condition_cap=condition_cap,
    )


def mismatched_filter_model(num_landmarks: int) -> FilterModel:
    """EKF baseline that trusts :data:`MISMATCH_NOISE` instead of the truth."""
    return slam_filter_model(MISMATCH_NOISE, num_landmarks)


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def predict(belief: GaussianBelief, control, model: FilterModel) -> GaussianBelief:
    """Propagate mean and covariance through the (noise-free) motion model."""
    sys = model.system
    jac = model.motion_jacobian(belief.mean, control)
    mean = sys.wrap_state(sys.motion(belief.mean, control))
    cov = _symmetrize(jac @ belief.cov @ jac.T + model.Q)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise FilterDivergenceError("non-finite prediction")
    return GaussianBelief(mean, cov)


def kalman_gain(belief: GaussianBelief, H: np.ndarray, R: np.ndarray,
                condition_cap: float = 1e12):
    """Gain and innovation covariance ``(K, S)`` for the given linearization.

    ``K`` solves ``K S = cov H^T`` through a symmetric positive-definite
    factorization; the solve is refused when ``S`` is ill conditioned.
    """
    s = _symmetrize(H @ belief.cov @ H.T + R)
    condition = float(np.linalg.cond(s))
    if not np.isfinite(condition) or condition > condition_cap:
        raise IllConditionedError(
            f"innovation covariance condition number {condition:.3e} exceeds cap "
            f"{condition_cap:.3e}", condition=condition)
    try:
        factor = scipy.linalg.cho_factor(s, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise IllConditionedError(f"innovation covariance not positive definite: {exc}",
                                  condition=condition)
    gain = scipy.linalg.cho_solve(factor, (belief.cov @ H.T).T).T
    return gain, s


@dataclass
class UpdateInfo:
    innovation: np.ndarray
    gain: np.ndarray
    innovation_cov: np.ndarray
    psd_repaired: bool = False


def update(belief: GaussianBelief, y: np.ndarray, model: FilterModel):
    """Measurement update; returns the posterior belief and step diagnostics.

    The covariance uses the subtractive form followed by symmetrization;
    if the result dips below PSD tolerance its negative eigenvalues are
    clipped to zero and the repair is reported in the diagnostics.
    """
    sys = model.system
    mean = belief.mean
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise FilterDivergenceError("non-finite measurement")
    H = sys.measurement_jacobian(mean)
    predicted = sys.measurement(mean)
    gain, s = kalman_gain(belief, H, model.R, model.condition_cap)
    innovation = sys.measurement_diff(y, predicted)
    new_mean = sys.wrap_state(mean + gain @ innovation)
    cov = _symmetrize(belief.cov - gain @ s @ gain.T)
    repaired = False
    min_eig = float(np.linalg.eigvalsh(cov)[0])
    if min_eig < -PSD_TOLERANCE:
        eigvals, eigvecs = np.linalg.eigh(cov)
        cov = _symmetrize((eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T)
        repaired = True
    if not (np.all(np.isfinite(new_mean)) and np.all(np.isfinite(cov))):
        raise FilterDivergenceError("non-finite update")
    return GaussianBelief(new_mean, cov), UpdateInfo(innovation, gain, s, repaired)


def initial_mean(first_control, first_measurement, num_landmarks: int,
                 min_range: float = 1e-3) -> np.ndarray:
    """Shared starting estimate for every estimator.

    The agent pose is the known origin; landmark positions are bootstrapped
    by inverting the first measurement at the pose the first control predicts
    (that is where the measurement was taken). Measured ranges are floored at
    ``min_range`` so a noisy non-positive range cannot break initialization.
    Broadcasts over leading batch dimensions.
    """
    y = np.asarray(first_measurement, dtype=float)
    lead = y.shape[:-1]
    x0 = np.zeros(lead + (state_dim(num_landmarks),))
    pose1 = motion_step(x0, first_control)[..., :3]
    ranges = np.maximum(y[..., 0::2], min_range)
    landmarks = geometry.inverse_observation(
        pose1[..., None, :], ranges, y[..., 1::2])
    out = np.zeros_like(x0)
    out[..., 3:] = landmarks.reshape(lead + (2 * num_landmarks,))
    return out


def initial_belief(first_control, first_measurement, num_landmarks: int,
                   pose_var: float = 1e-4, landmark_var: float = 100.0) -> GaussianBelief:
    """Standard initial belief: tight pose prior, loose landmark prior."""
    mean = initial_mean(first_control, first_measurement, num_landmarks)
    diag = np.concatenate([
        np.full(3, pose_var), np.full(2 * num_landmarks, landmark_var)])
    return GaussianBelief(mean, np.diag(diag))


@dataclass
class FilterResult:
    means: np.ndarray             # (T, n) posterior means
    innovation_norms: np.ndarray  # (T,)
    cov_traces: np.ndarray        # (T,)
    psd_repairs: int = 0


def run_filter(trajectory, model: FilterModel,
               init: GaussianBelief | None = None) -> FilterResult:
    """Alternate predict/update over a whole trajectory.

    ``trajectory`` needs ``controls`` (T, 2) and ``measurements`` (T, m)
    attributes. Errors raised mid-run are annotated with the step index.
    """
    controls = np.asarray(trajectory.controls, dtype=float)
    measurements = np.asarray(trajectory.measurements, dtype=float)
    steps = len(controls)
    if init is None:
        m = (model.system.state_dim - 3) // 2
        init = initial_belief(controls[0], measurements[0], m)
    belief = init.copy()
    n = model.system.state_dim
    means = np.empty((steps, n))
    innovation_norms = np.empty(steps)
    cov_traces = np.empty(steps)
    repairs = 0
    for t in range(steps):
        try:
            belief = predict(belief, controls[t], model)
            belief, info = update(belief, measurements[t], model)
        except FilterDivergenceError as exc:
            raise FilterDivergenceError(f"step {t}: {exc}", step=t) from exc
        except IllConditionedError as exc:
            raise IllConditionedError(f"step {t}: {exc}", condition=exc.condition) from exc
        means[t] = belief.mean
        innovation_norms[t] = float(np.linalg.norm(info.innovation))
        cov_traces[t] = float(np.trace(belief.cov))
        repairs += int(info.psd_repaired)
    return FilterResult(means, innovation_norms, cov_traces, repairs)
