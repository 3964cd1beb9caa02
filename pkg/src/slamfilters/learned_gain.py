"""Single-network learned-gain filter (estimator A3).

The EKF prediction step is kept; the measurement update applies a gain
matrix emitted by one recurrent network from four difference features
(update difference, evolution difference, innovation, observation
difference). No covariance is propagated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ekf import SystemModel, slam_system
from .features import FeatureNormalizer
from .nn import RecurrentGainNet, StepTape, backward_through_time, step as net_step
from .rollout import FilterRecursion, StepContext, TrajectoryArrays, apply_gain

A3_TAG = "A3"


def feature_dim(system: SystemModel) -> int:
    return 2 * system.state_dim + 2 * system.measurement_dim


def feature_vector(ctx: StepContext) -> np.ndarray:
    """Raw (un-normalized) network input for one step, shape (B, D)."""
    return np.concatenate(
        [ctx.update_diff, ctx.evolution_diff, ctx.innovation, ctx.obs_diff], axis=-1)


@dataclass
class LearnedGainModel:
    net: RecurrentGainNet
    normalizer: FeatureNormalizer
    num_landmarks: int | None = None

    @property
    def tag(self) -> str:
        return A3_TAG

    def system(self) -> SystemModel:
        if self.num_landmarks is None:
            raise ValueError("model carries no landmark count; pass a system explicitly")
        return slam_system(self.num_landmarks)


def create_model(system: SystemModel, hidden_dim: int, seed: int,
                 normalizer: FeatureNormalizer | None = None,
                 num_landmarks: int | None = None) -> LearnedGainModel:
    net = RecurrentGainNet.create(feature_dim(system), hidden_dim,
                                  system.state_dim, system.measurement_dim, seed)
    norm = normalizer or FeatureNormalizer.identity(feature_dim(system))
    return LearnedGainModel(net, norm, num_landmarks)


@dataclass
class RolloutRecord:
    """Everything training and the gradient checks need from one rollout."""

    feats: np.ndarray         # (T, B, D) normalized network inputs
    tapes: list[StepTape]
    innovations: np.ndarray   # (T, B, m) wrapped
    prior_err: np.ndarray     # (T, B, n) wrapped truth minus prior
    gains: np.ndarray         # (T, B, n, m)
    priors: np.ndarray        # (T, B, n)
    posteriors: np.ndarray    # (T, B, n)


def rollout(model: LearnedGainModel, system: SystemModel, data: TrajectoryArrays,
            record: bool = False, sanitize: bool = False):
    """Run the filter over a batch. Returns (estimates (B,T,n), record or None).

    ``record=True`` keeps the activation tapes and step data used for
    training; it requires ground-truth states in ``data``.
    """
    batch, steps = data.states.shape[0], data.num_steps
    n, m = system.state_dim, system.measurement_dim
    rec = FilterRecursion(system, data.init_means, sanitize=sanitize)
    hidden = np.zeros((batch, model.net.hidden_dim))
    estimates = np.empty((batch, steps, n))
    trace = RolloutRecord(
        feats=np.empty((steps, batch, feature_dim(system))),
        tapes=[], innovations=np.empty((steps, batch, m)),
        prior_err=np.empty((steps, batch, n)),
        gains=np.empty((steps, batch, n, m)),
        priors=np.empty((steps, batch, n)),
        posteriors=np.empty((steps, batch, n)),
    ) if record else None
    for t in range(steps):
        ctx = rec.begin_step(data.controls[:, t], data.measurements[:, t])
        feats = model.normalizer(feature_vector(ctx))
        out, hidden, tape = net_step(model.net.params, feats, hidden, record)
        gains = out.reshape(batch, n, m)
        posterior = rec.commit(apply_gain(ctx.prior, gains, ctx.innovation))
        estimates[:, t] = posterior
        if record:
            trace.feats[t] = feats
            trace.tapes.append(tape)
            trace.innovations[t] = ctx.innovation
            trace.prior_err[t] = system.state_diff(data.states[:, t], ctx.prior)
            trace.gains[t] = gains
            trace.priors[t] = ctx.prior
            trace.posteriors[t] = rec.posterior
    return estimates, trace


def run_filter(model: LearnedGainModel, data: TrajectoryArrays,
               system: SystemModel | None = None, batch_size: int = 256) -> np.ndarray:
    """Filter every trajectory; rows that diverge are NaN from that step on."""
    system = system or model.system()
    chunks = []
    for start in range(0, len(data), batch_size):
        est, _ = rollout(model, system, data.subset(slice(start, start + batch_size)),
                         sanitize=True)
        chunks.append(est)
    return np.concatenate(chunks, axis=0)


def run_with_injected_gains(system: SystemModel, data: TrajectoryArrays,
                            gains: np.ndarray) -> np.ndarray:
    """Run the update recursion with externally supplied per-step gains.

    ``gains`` has shape (T, n, m) for a single trajectory batch of one, or
    (T, B, n, m). Used to pin the recursion to the EKF: feeding the analytic
    gain sequence must reproduce the EKF estimates.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.ndim == 3:
        gains = gains[:, None]
    batch, steps = data.states.shape[0], data.num_steps
    rec = FilterRecursion(system, data.init_means)
    estimates = np.empty((batch, steps, system.state_dim))
    for t in range(steps):
        ctx = rec.begin_step(data.controls[:, t], data.measurements[:, t])
        estimates[:, t] = rec.commit(apply_gain(ctx.prior, gains[t], ctx.innovation))
    return estimates


class LearnedGainFilter:
    """Stateful one-trajectory interface around :func:`rollout` internals."""

    def __init__(self, model: LearnedGainModel, system: SystemModel | None = None):
        self.model = model
        self.system = system or model.system()
        self._rec: FilterRecursion | None = None
        self._hidden: np.ndarray | None = None

    def reset(self, init_mean: np.ndarray) -> None:
        self._rec = FilterRecursion(self.system, np.asarray(init_mean, dtype=float)[None, :])
        self._hidden = np.zeros((1, self.model.net.hidden_dim))

    def step(self, y: np.ndarray, control) -> np.ndarray:
        """One predict/update cycle; returns the new posterior mean."""
        if self._rec is None:
            raise RuntimeError("call reset() before stepping")
        ctx = self._rec.begin_step(np.asarray(control, dtype=float)[None, :],
                                   np.asarray(y, dtype=float)[None, :])
        feats = self.model.normalizer(feature_vector(ctx))
        out, self._hidden, _ = net_step(self.model.net.params, feats, self._hidden, False)
        gains = out.reshape(1, self.system.state_dim, self.system.measurement_dim)
        return self._rec.commit(apply_gain(ctx.prior, gains, ctx.innovation))[0]


def loss_and_output_grads(record: RolloutRecord):
    """Empirical squared-error loss and its per-step gain gradients.

    The loss averages ``||K_t dy_t - dx_t||^2`` over steps and batch rows;
    the returned list holds ``dL/dK_t``, the outer-product form evaluated on
    the recorded rollout.
    """
    steps, batch = record.innovations.shape[:2]
    residual = np.einsum("tbnm,tbm->tbn", record.gains, record.innovations)
    residual -= record.prior_err
    loss = float(np.sum(residual ** 2)) / (steps * batch)
    scale = 2.0 / (steps * batch)
    grads = [scale * np.einsum("bn,bm->bnm", residual[t], record.innovations[t])
             for t in range(steps)]
    return loss, grads


def parameter_grads(model: LearnedGainModel, record: RolloutRecord):
    """Training gradient of the rollout loss for every network parameter."""
    loss, output_grads = loss_and_output_grads(record)
    grads = backward_through_time(model.net.params, record.tapes, output_grads)
    return loss, grads


def replay_loss(params, record: RolloutRecord) -> float:
    """The training loss as a pure function of parameters, rollout held fixed.

    Re-runs the network over the recorded feature sequence; the innovation
    and prior-error sequences stay as recorded. Finite differences of this
    function validate :func:`parameter_grads`.
    """
    from .nn import run_sequence

    steps, batch, _ = record.feats.shape
    n, m = record.prior_err.shape[-1], record.innovations.shape[-1]
    outs, _ = run_sequence(params, record.feats)
    gains = outs.reshape(steps, batch, n, m)
    residual = np.einsum("tbnm,tbm->tbn", gains, record.innovations) - record.prior_err
    return float(np.sum(residual ** 2)) / (steps * batch)
