"""Batched filtering recursion shared by the learned-gain estimators.

The recursion mirrors the EKF state update (predict with the known motion
model, correct the prediction with a gain applied to the wrapped innovation)
but carries no covariance. It additionally maintains the lagged difference
signals the gain networks consume:

* update difference  - previous posterior minus previous prior,
* evolution difference - previous posterior minus the posterior before it,
* innovation         - current measurement minus its prediction,
* observation difference - current measurement minus the previous one.

All difference signals start as zeros at the first step (cold start) and all
angular components are wrapped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ekf import SystemModel, initial_mean
from .errors import FilterDivergenceError


@dataclass
class TrajectoryArrays:
    """Stacked trajectories ready for batched filtering.

    ``controls[l, t]`` drives step ``t`` of trajectory ``l`` and
    ``measurements[l, t]`` is observed after it; ``init_means`` holds the
    filter starting estimate for each trajectory.
    """

    states: np.ndarray        # (L, T, n) ground truth
    controls: np.ndarray      # (L, T, c)
    measurements: np.ndarray  # (L, T, m)
    init_means: np.ndarray    # (L, n)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def num_steps(self) -> int:
        return self.states.shape[1]

    def subset(self, indices) -> "TrajectoryArrays":
        return TrajectoryArrays(self.states[indices], self.controls[indices],
                                self.measurements[indices], self.init_means[indices])

    @classmethod
    def from_dataset(cls, dataset) -> "TrajectoryArrays":
        states = np.stack([t.states for t in dataset.trajectories])
        controls = np.stack([t.controls for t in dataset.trajectories])
        measurements = np.stack([t.measurements for t in dataset.trajectories])
        init_means = initial_mean(controls[:, 0], measurements[:, 0],
                                  dataset.num_landmarks)
        return cls(states, controls, measurements, init_means)


@dataclass
class StepContext:
    """Everything the gain networks may look at for the current step."""

    t: int                       # 1-based step index
    prior: np.ndarray            # (B, n)
    predicted_meas: np.ndarray   # (B, m)
    innovation: np.ndarray       # (B, m), wrapped
    obs_diff: np.ndarray         # (B, m), wrapped; zeros at t=1
    update_diff: np.ndarray      # (B, n); zeros at t=1
    evolution_diff: np.ndarray   # (B, n); zeros at t=1


class FilterRecursion:
    """Predict / feature bookkeeping for one batch of trajectories.

    ``sanitize=True`` freezes any batch row that turns non-finite (its
    estimates become NaN from that step on) instead of failing the whole
    batch; with ``sanitize=False`` a non-finite row raises.
    """

    def __init__(self, system: SystemModel, init_mean: np.ndarray,
                 sanitize: bool = False):
        init_mean = np.asarray(init_mean, dtype=float)
        if init_mean.ndim != 2:
            raise ValueError("init_mean must be (batch, state_dim)")
        self.system = system
        self.sanitize = sanitize
        self.posterior = init_mean.copy()
        self._fallback = init_mean.copy()
        batch = init_mean.shape[0]
        self.update_diff = np.zeros_like(init_mean)
        self.evolution_diff = np.zeros_like(init_mean)
        self._y_prev = np.zeros((batch, system.measurement_dim))
        self.dead = np.zeros(batch, dtype=bool)
        self.t = 0
        self._prior: np.ndarray | None = None
        self._y: np.ndarray | None = None

    def _min_range_zero(self, state: np.ndarray) -> np.ndarray:
        m = (self.system.state_dim - 3) // 2
        lm = state[:, 3:].reshape(len(state), m, 2)
        r = np.hypot(lm[..., 0] - state[:, 0:1], lm[..., 1] - state[:, 1:2])
        return np.any(r == 0.0, axis=1)

    def begin_step(self, control: np.ndarray, y: np.ndarray) -> StepContext:
        self.t += 1
        sys = self.system
        prior = sys.wrap_state(sys.motion(self.posterior, control))
        if self.sanitize:
            bad = ~np.all(np.isfinite(prior), axis=1) | self._min_range_zero(prior)
            if np.any(bad & ~self.dead):
                self.dead |= bad
            if np.any(self.dead):
                prior[self.dead] = self._fallback[self.dead]
        predicted = sys.measurement(prior)
        innovation = sys.measurement_diff(y, predicted)
        if self.t > 1:
            obs_diff = sys.measurement_diff(y, self._y_prev)
        else:
            obs_diff = np.zeros_like(y)
        self._prior = prior
        self._y = y
        return StepContext(self.t, prior, predicted, innovation, obs_diff,
                           self.update_diff, self.evolution_diff)

    def commit(self, posterior_raw: np.ndarray) -> np.ndarray:
        """Finish the step with the gain-corrected estimate (heading unwrapped).

        Returns the wrapped posterior; dead rows hold NaN.
        """
        sys = self.system
        finite = np.all(np.isfinite(posterior_raw), axis=1)
        if not self.sanitize and not np.all(finite):
            raise FilterDivergenceError(f"non-finite estimate at step {self.t}",
                                        step=self.t)
        if self.sanitize:
            self.dead |= ~finite
            posterior_raw = np.where(self.dead[:, None], self._fallback, posterior_raw)
        posterior = sys.wrap_state(posterior_raw)
        self.update_diff = sys.state_diff(posterior, self._prior)
        self.evolution_diff = sys.state_diff(posterior, self.posterior)
        self.posterior = posterior
        self._y_prev = self._y
        out = posterior.copy()
        if self.sanitize and np.any(self.dead):
            out[self.dead] = np.nan
        return out


def apply_gain(prior: np.ndarray, gains: np.ndarray, innovation: np.ndarray) -> np.ndarray:
    """Gain-weighted correction of the prior, before heading wrap."""
    return prior + np.einsum("bnm,bm->bn", gains, innovation)
