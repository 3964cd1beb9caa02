"""Split-factor learned-gain filter (estimator A4).

The gain is composed from two recurrent networks and the analytic
measurement Jacobian: a square state-side factor (an implicit prior
covariance), the transposed Jacobian, and a square innovation-side factor
(an implicit inverse innovation covariance):

    gain = G1 @ H^T @ G2

Each factor has its own feature set. By default the state-side network sees
the state differences plus the measurement-function locality terms
(linearization error and Jacobian), and the innovation-side network sees the
measurement differences plus the same locality terms; an ablation routing
feeds all features to both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ekf import FilterModel, GaussianBelief, SystemModel, initial_belief, kalman_gain, slam_system
from .features import FeatureNormalizer
from .nn import RecurrentGainNet, StepTape, backward_through_time, step as net_step
from .rollout import FilterRecursion, StepContext, TrajectoryArrays, apply_gain

A4_TAG = "A4"

ROUTINGS = ("split", "all")


def locality_features(ctx: StepContext, jac: np.ndarray):
    """Linearization error and flattened Jacobian for the current prior."""
    linearization_err = ctx.predicted_meas - np.einsum("bmn,bn->bm", jac, ctx.prior)
    flat_jac = jac.reshape(jac.shape[0], -1)
    return linearization_err, flat_jac


def feature_vectors(ctx: StepContext, jac: np.ndarray, routing: str = "split"):
    """Raw (un-normalized) inputs for the two factor networks."""
    lin_err, flat_jac = locality_features(ctx, jac)
    if routing == "split":
        g1 = np.concatenate([ctx.update_diff, ctx.evolution_diff, lin_err, flat_jac], axis=-1)
        g2 = np.concatenate([ctx.innovation, ctx.obs_diff, lin_err, flat_jac], axis=-1)
        return g1, g2
    if routing == "all":
        shared = np.concatenate(
            [ctx.update_diff, ctx.evolution_diff, ctx.innovation, ctx.obs_diff,
             lin_err, flat_jac], axis=-1)
        return shared, shared
    raise ValueError(f"unknown feature routing {routing!r}")


def feature_dims(system: SystemModel, routing: str = "split"):
    n, m = system.state_dim, system.measurement_dim
    if routing == "split":
        return 2 * n + m + m * n, 2 * m + m + m * n
    if routing == "all":
        d = 2 * n + 2 * m + m + m * n
        return d, d
    raise ValueError(f"unknown feature routing {routing!r}")


def compose_gain(g1_out: np.ndarray, jac: np.ndarray, g2_out: np.ndarray) -> np.ndarray:
    """``g1 @ jac^T @ g2``, batched over any shared leading dimensions."""
    g1_out = np.asarray(g1_out, dtype=float)
    g2_out = np.asarray(g2_out, dtype=float)
    jac = np.asarray(jac, dtype=float)
    n = g1_out.shape[-1]
    m = g2_out.shape[-1]
    if g1_out.shape[-2] != n or g2_out.shape[-2] != m or jac.shape[-2:] != (m, n):
        raise ValueError(
            f"factor shapes {g1_out.shape} / {jac.shape} / {g2_out.shape} do not compose")
    jac_t = np.swapaxes(jac, -1, -2)
    return g1_out @ jac_t @ g2_out


@dataclass
class SplitGainModel:
    g1: RecurrentGainNet
    g2: RecurrentGainNet
    norm1: FeatureNormalizer
    norm2: FeatureNormalizer
    routing: str = "split"
    num_landmarks: int | None = None

    @property
    def tag(self) -> str:
        return A4_TAG

    def system(self) -> SystemModel:
        if self.num_landmarks is None:
            raise ValueError("model carries no landmark count; pass a system explicitly")
        return slam_system(self.num_landmarks)


def create_model(system: SystemModel, hidden_dim: int, seed: int,
                 routing: str = "split",
                 normalizers: tuple[FeatureNormalizer, FeatureNormalizer] | None = None,
                 num_landmarks: int | None = None) -> SplitGainModel:
    d1, d2 = feature_dims(system, routing)
    n, m = system.state_dim, system.measurement_dim
    g1 = RecurrentGainNet.create(d1, hidden_dim, n, n, seed)
    g2 = RecurrentGainNet.create(d2, hidden_dim, m, m, seed + 1)
    if normalizers is None:
        normalizers = (FeatureNormalizer.identity(d1), FeatureNormalizer.identity(d2))
    return SplitGainModel(g1, g2, normalizers[0], normalizers[1], routing, num_landmarks)


@dataclass
class RolloutRecord:
    feats1: np.ndarray        # (T, B, D1) normalized
    feats2: np.ndarray        # (T, B, D2) normalized
    tapes1: list[StepTape]
    tapes2: list[StepTape]
    innovations: np.ndarray   # (T, B, m)
    prior_err: np.ndarray     # (T, B, n)
    jacobians: np.ndarray     # (T, B, m, n)
    g1_out: np.ndarray        # (T, B, n, n)
    g2_out: np.ndarray        # (T, B, m, m)
    gains: np.ndarray         # (T, B, n, m)
    priors: np.ndarray        # (T, B, n)
    posteriors: np.ndarray    # (T, B, n)


def rollout(model: SplitGainModel, system: SystemModel, data: TrajectoryArrays,
            record: bool = False, sanitize: bool = False):
    """Run the split-gain filter over a batch; see learned_gain.rollout."""
    batch, steps = data.states.shape[0], data.num_steps
    n, m = system.state_dim, system.measurement_dim
    d1, d2 = feature_dims(system, model.routing)
    rec = FilterRecursion(system, data.init_means, sanitize=sanitize)
    h1 = np.zeros((batch, model.g1.hidden_dim))
    h2 = np.zeros((batch, model.g2.hidden_dim))
    estimates = np.empty((batch, steps, n))
    trace = RolloutRecord(
        feats1=np.empty((steps, batch, d1)), feats2=np.empty((steps, batch, d2)),
        tapes1=[], tapes2=[],
        innovations=np.empty((steps, batch, m)), prior_err=np.empty((steps, batch, n)),
        jacobians=np.empty((steps, batch, m, n)),
        g1_out=np.empty((steps, batch, n, n)), g2_out=np.empty((steps, batch, m, m)),
        gains=np.empty((steps, batch, n, m)),
        priors=np.empty((steps, batch, n)), posteriors=np.empty((steps, batch, n)),
    ) if record else None
    for t in range(steps):
        ctx = rec.begin_step(data.controls[:, t], data.measurements[:, t])
        jac = system.measurement_jacobian(ctx.prior)
        raw1, raw2 = feature_vectors(ctx, jac, model.routing)
        f1 = model.norm1(raw1)
        f2 = model.norm2(raw2)
        out1, h1, tape1 = net_step(model.g1.params, f1, h1, record)
        out2, h2, tape2 = net_step(model.g2.params, f2, h2, record)
        g1_out = out1.reshape(batch, n, n)
        g2_out = out2.reshape(batch, m, m)
        gains = compose_gain(g1_out, jac, g2_out)
        posterior = rec.commit(apply_gain(ctx.prior, gains, ctx.innovation))
        estimates[:, t] = posterior
        if record:
            trace.feats1[t] = f1
            trace.feats2[t] = f2
            trace.tapes1.append(tape1)
            trace.tapes2.append(tape2)
            trace.innovations[t] = ctx.innovation
            trace.prior_err[t] = system.state_diff(data.states[:, t], ctx.prior)
            trace.jacobians[t] = jac
            trace.g1_out[t] = g1_out
            trace.g2_out[t] = g2_out
            trace.gains[t] = gains
            trace.priors[t] = ctx.prior
            trace.posteriors[t] = rec.posterior
    return estimates, trace


def run_filter(model: SplitGainModel, data: TrajectoryArrays,
               system: SystemModel | None = None, batch_size: int = 256) -> np.ndarray:
    system = system or model.system()
    chunks = []
    for start in range(0, len(data), batch_size):
        est, _ = rollout(model, system, data.subset(slice(start, start + batch_size)),
                         sanitize=True)
        chunks.append(est)
    return np.concatenate(chunks, axis=0)


class SplitGainFilter:
    """Stateful one-trajectory interface for the split-gain estimator."""

    def __init__(self, model: SplitGainModel, system: SystemModel | None = None):
        self.model = model
        self.system = system or model.system()
        self._rec: FilterRecursion | None = None
        self._h1 = self._h2 = None

    def reset(self, init_mean: np.ndarray) -> None:
        self._rec = FilterRecursion(self.system, np.asarray(init_mean, dtype=float)[None, :])
        self._h1 = np.zeros((1, self.model.g1.hidden_dim))
        self._h2 = np.zeros((1, self.model.g2.hidden_dim))

    def step(self, y: np.ndarray, control) -> np.ndarray:
        if self._rec is None:
            raise RuntimeError("call reset() before stepping")
        sysm = self.system
        ctx = self._rec.begin_step(np.asarray(control, dtype=float)[None, :],
                                   np.asarray(y, dtype=float)[None, :])
        jac = sysm.measurement_jacobian(ctx.prior)
        raw1, raw2 = feature_vectors(ctx, jac, self.model.routing)
        out1, self._h1, _ = net_step(self.model.g1.params, self.model.norm1(raw1), self._h1, False)
        out2, self._h2, _ = net_step(self.model.g2.params, self.model.norm2(raw2), self._h2, False)
        g1_out = out1.reshape(1, sysm.state_dim, sysm.state_dim)
        g2_out = out2.reshape(1, sysm.measurement_dim, sysm.measurement_dim)
        gains = compose_gain(g1_out, jac, g2_out)
        return self._rec.commit(apply_gain(ctx.prior, gains, ctx.innovation))[0]


def run_with_injected_ekf_factors(filter_model: FilterModel, trajectory,
                                  init: GaussianBelief | None = None) -> np.ndarray:
    """Replace both learned factors with the exact EKF quantities.

    The state-side factor is the predicted covariance and the
    innovation-side factor is the inverse innovation covariance, both taken
    from a covariance recursion run alongside; composing them with the
    Jacobian must reproduce the analytic gain, so the returned estimates
    must match the plain EKF. This pins the composition rule to the EKF
    gain equation.
    """
    import scipy.linalg

    sysm = filter_model.system
    controls = np.asarray(trajectory.controls, dtype=float)
    measurements = np.asarray(trajectory.measurements, dtype=float)
    if init is None:
        m = (sysm.state_dim - 3) // 2
        init = initial_belief(controls[0], measurements[0], m)
    belief = init.copy()
    steps = len(controls)
    means = np.empty((steps, sysm.state_dim))
    eye_m = np.eye(sysm.measurement_dim)
    from .ekf import predict as ekf_predict, _symmetrize

    for t in range(steps):
        belief = ekf_predict(belief, controls[t], filter_model)
        jac = sysm.measurement_jacobian(belief.mean)
        _, s = kalman_gain(belief, jac, filter_model.R, filter_model.condition_cap)
        s_inv = scipy.linalg.cho_solve(scipy.linalg.cho_factor(s, lower=True), eye_m)
        gain = compose_gain(belief.cov, jac, s_inv)
        innovation = sysm.measurement_diff(measurements[t], sysm.measurement(belief.mean))
        mean = sysm.wrap_state(belief.mean + gain @ innovation)
        cov = _symmetrize(belief.cov - gain @ s @ gain.T)
        belief = GaussianBelief(mean, cov)
        means[t] = mean
    return means


def loss_and_output_grads(record: RolloutRecord):
    """Loss plus per-step output gradients for both factor networks.

    The composed-gain gradient is the outer-product form on the recorded
    rollout; it is pushed into each factor through the other (frozen) factor
    and the Jacobian, matching the alternating first-order conditions.
    """
    steps, batch = record.innovations.shape[:2]
    residual = np.einsum("tbnm,tbm->tbn", record.gains, record.innovations)
    residual -= record.prior_err
    loss = float(np.sum(residual ** 2)) / (steps * batch)
    scale = 2.0 / (steps * batch)
    d_gain = scale * np.einsum("tbn,tbm->tbnm", residual, record.innovations)
    jac_t = np.swapaxes(record.jacobians, -1, -2)          # (T, B, n, m)
    right = jac_t @ record.g2_out                           # H^T G2  (T, B, n, m)
    left = record.g1_out @ jac_t                            # G1 H^T  (T, B, n, m)
    d_g1 = np.einsum("tbim,tbjm->tbij", d_gain, right)
    d_g2 = np.einsum("tbip,tbiq->tbpq", left, d_gain)
    return loss, list(d_g1), list(d_g2)


def parameter_grads(model: SplitGainModel, record: RolloutRecord,
                    which: str = "both"):
    """Training gradients for one or both factor networks."""
    loss, d_g1, d_g2 = loss_and_output_grads(record)
    grads1 = grads2 = None
    if which in ("g1", "both"):
        grads1 = backward_through_time(model.g1.params, record.tapes1, d_g1)
    if which in ("g2", "both"):
        grads2 = backward_through_time(model.g2.params, record.tapes2, d_g2)
    return loss, grads1, grads2


def replay_loss(params1, params2, record: RolloutRecord) -> float:
    """Training loss as a function of the two parameter sets, rollout fixed."""
    from .nn import run_sequence

    steps, batch = record.innovations.shape[:2]
    n, m = record.prior_err.shape[-1], record.innovations.shape[-1]
    out1, _ = run_sequence(params1, record.feats1)
    out2, _ = run_sequence(params2, record.feats2)
    g1_out = out1.reshape(steps, batch, n, n)
    g2_out = out2.reshape(steps, batch, m, m)
    gains = g1_out @ np.swapaxes(record.jacobians, -1, -2) @ g2_out
    residual = np.einsum("tbnm,tbm->tbn", gains, record.innovations) - record.prior_err
    return float(np.sum(residual ** 2)) / (steps * batch)
