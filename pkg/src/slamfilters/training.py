"""Training loops for the learned-gain estimators.

The single-gain estimator is trained end-to-end; the split estimator uses
alternating optimization (one epoch on the state-side factor with the
innovation-side factor frozen, then the reverse) until the validation loss
settles. Per-step loss gradients are the outer-product form evaluated on the
recorded rollout; they are backpropagated through the recurrent networks
over the full unrolled trajectory. All randomness is seeded, batches reduce
in a fixed order, and the best-validation parameters are returned.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import learned_gain, split_gain
from .datasets import Dataset
from .ekf import SystemModel, slam_system
from .errors import TrainingDivergenceError
from .features import FeatureNormalizer
from .optim import Adam, AdamConfig
from .rollout import TrajectoryArrays

_SHUFFLE_STREAM = 0x5470

DEFAULT_HIDDEN_SINGLE = 128
DEFAULT_HIDDEN_SPLIT = 64


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float | None = 1.0
    val_fraction: float = 0.1
    seed: int = 0
    hidden_dim: int | None = None       # None: per-estimator default
    pilot_trajectories: int = 200
    feature_clip: float = 10.0
    norm_source: str = "ekf"             # "ekf": stats from an exact-EKF replay;
                                         # "pilot": stats from an untrained rollout
    lr_decay_factor: float = 1.0         # per-interval multiplier (1.0 = constant)
    lr_decay_every: int = 10             # epochs (or cycles) between decays
    # split-estimator alternation
    max_cycles: int = 30
    cycle_tol: float = 1e-3
    joint: bool = False                  # ablation: update both factors jointly
    routing: str = "split"

    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, clip=self.grad_clip)


@dataclass
class TrainingLog:
    entries: list[dict] = field(default_factory=list)
    best_val: float = np.inf
    best_entry: int = -1

    def add(self, **kwargs) -> None:
        self.entries.append(kwargs)

    def val_curve(self, phase: str | None = None) -> list[float]:
        return [e["val_loss"] for e in self.entries
                if "val_loss" in e and (phase is None or e.get("phase") == phase)]


def _as_arrays(data) -> TrajectoryArrays:
    if isinstance(data, Dataset):
        return TrajectoryArrays.from_dataset(data)
    return data


def _resolve_system(data, system: SystemModel | None):
    if system is not None:
        return system
    if isinstance(data, Dataset):
        return slam_system(data.num_landmarks)
    raise ValueError("a SystemModel is required when training on raw arrays")


def _split_train_val(arrays: TrajectoryArrays, val_fraction: float):
    total = len(arrays)
    n_val = int(round(val_fraction * total)) if val_fraction > 0 else 0
    n_val = min(max(n_val, 1 if val_fraction > 0 else 0), total - 1)
    return arrays.subset(slice(0, total - n_val)), arrays.subset(slice(total - n_val, total))


def _batches(count: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def _check_finite_params(params: dict, epoch: int) -> None:
    for name, value in params.items():
        if not np.all(np.isfinite(value)):
            raise TrainingDivergenceError(
                f"non-finite parameter {name!r} after epoch {epoch}", epoch=epoch)


def _ekf_feature_contexts(dataset: Dataset, system: SystemModel, count: int):
    """Per-step filtering quantities along exact-EKF runs, one batch per trajectory.

    Used to compute normalization statistics at the scale of a functioning
    filter (an untrained network produces much larger transients). Each
    context packs a whole trajectory along the batch axis.
    """
    from .ekf import initial_mean, run_filter, slam_filter_model
    from .errors import SlamFiltersError
    from .rollout import StepContext

    contexts = []
    for traj in dataset.trajectories[:min(count, len(dataset.trajectories))]:
        model = slam_filter_model(traj.noise, dataset.num_landmarks)
        try:
            result = run_filter(traj, model)
        except SlamFiltersError:
            continue
        init = initial_mean(traj.controls[0], traj.measurements[0],
                            dataset.num_landmarks)
        posts = np.vstack([init[None, :], result.means])      # posts[0] = init
        priors = system.wrap_state(system.motion(posts[:-1], traj.controls))
        predicted = system.measurement(priors)
        innovation = system.measurement_diff(traj.measurements, predicted)
        obs_diff = np.zeros_like(traj.measurements)
        obs_diff[1:] = system.measurement_diff(traj.measurements[1:],
                                               traj.measurements[:-1])
        update_diff = np.zeros_like(priors)
        update_diff[1:] = system.state_diff(posts[1:-1], priors[:-1])
        evolution_diff = np.zeros_like(priors)
        evolution_diff[1:] = system.state_diff(posts[1:-1], posts[:-2])
        contexts.append(StepContext(
            t=0, prior=priors, predicted_meas=predicted, innovation=innovation,
            obs_diff=obs_diff, update_diff=update_diff,
            evolution_diff=evolution_diff))
    if not contexts:
        raise TrainingDivergenceError("EKF normalization replay failed on every "
                                      "pilot trajectory")
    return contexts


def validation_loss(run_filter, model, system, arrays: TrajectoryArrays,
                    batch_size: int = 500) -> float:
    """Mean squared estimation error (wrapped heading) over a held-out set."""
    estimates = run_filter(model, arrays, system=system, batch_size=batch_size)
    err = system.state_diff(estimates, arrays.states)
    finite = np.all(np.isfinite(estimates), axis=(1, 2))
    if not np.any(finite):
        return float("inf")
    return float(np.mean(np.sum(err[finite] ** 2, axis=-1)))


def fit_normalizer_single(model, system, arrays: TrajectoryArrays,
                          pilot: int, clip: float,
                          dataset: Dataset | None = None) -> FeatureNormalizer:
    if dataset is not None:
        contexts = _ekf_feature_contexts(dataset, system, pilot)
        samples = np.concatenate([learned_gain.feature_vector(c) for c in contexts])
        return FeatureNormalizer.fit(samples, clip)
    subset = arrays.subset(slice(0, min(pilot, len(arrays))))
    _, record = learned_gain.rollout(model, system, subset, record=True)
    return FeatureNormalizer.fit(record.feats.reshape(-1, record.feats.shape[-1]), clip)


def fit_normalizers_split(model, system, arrays: TrajectoryArrays,
                          pilot: int, clip: float,
                          dataset: Dataset | None = None):
    if dataset is not None:
        contexts = _ekf_feature_contexts(dataset, system, pilot)
        from .geometry import jacobian_h

        f1_rows, f2_rows = [], []
        for ctx in contexts:
            raw1, raw2 = split_gain.feature_vectors(ctx, jacobian_h(ctx.prior),
                                                    model.routing)
            f1_rows.append(raw1)
            f2_rows.append(raw2)
        return (FeatureNormalizer.fit(np.concatenate(f1_rows), clip),
                FeatureNormalizer.fit(np.concatenate(f2_rows), clip))
    subset = arrays.subset(slice(0, min(pilot, len(arrays))))
    _, record = split_gain.rollout(model, system, subset, record=True)
    return (FeatureNormalizer.fit(record.feats1.reshape(-1, record.feats1.shape[-1]), clip),
            FeatureNormalizer.fit(record.feats2.reshape(-1, record.feats2.shape[-1]), clip))


def train_single_gain(data, config: TrainConfig, system: SystemModel | None = None):
    """Train the single-network estimator; returns (model, log)."""
    system = _resolve_system(data, system)
    arrays = _as_arrays(data)
    num_landmarks = data.num_landmarks if isinstance(data, Dataset) else None
    train_set, val_set = _split_train_val(arrays, config.val_fraction)
    hidden = config.hidden_dim or DEFAULT_HIDDEN_SINGLE

    model = learned_gain.create_model(system, hidden, config.seed,
                                      num_landmarks=num_landmarks)
    norm_dataset = data if (config.norm_source == "ekf" and isinstance(data, Dataset)) else None
    model.normalizer = fit_normalizer_single(
        model, system, train_set, config.pilot_trajectories, config.feature_clip,
        dataset=norm_dataset)

    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence((config.seed, _SHUFFLE_STREAM))))
    adam = Adam(model.net.params, config.adam())
    log = TrainingLog()
    best_params = model.net.clone_params()
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        losses = []
        for b, batch in enumerate(_batches(len(train_set), config.batch_size, rng)):
            _, record = learned_gain.rollout(model, system, train_set.subset(batch),
                                             record=True)
            loss, grads = learned_gain.parameter_grads(model, record)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"non-finite training loss (epoch {epoch}, batch {b})",
                    epoch=epoch, batch=b)
            adam.step(model.net.params, grads)
            losses.append(loss)
        _check_finite_params(model.net.params, epoch)
        val = validation_loss(learned_gain.run_filter, model, system, val_set) \
            if len(val_set) else float(np.mean(losses))
        log.add(epoch=epoch, train_loss=float(np.mean(losses)), val_loss=val,
                seconds=time.perf_counter() - start)
        if val < log.best_val:
            log.best_val = val
            log.best_entry = len(log.entries) - 1
            best_params = model.net.clone_params()
        if config.lr_decay_factor != 1.0 and epoch % config.lr_decay_every == 0:
            adam.config.learning_rate *= config.lr_decay_factor
    model.net.params = best_params
    return model, log


def _split_phase(model, system, train_set, config, adam, rng, which: str,
                 epoch_label, log: TrainingLog) -> None:
    losses = []
    params = model.g1.params if which == "g1" else model.g2.params
    for b, batch in enumerate(_batches(len(train_set), config.batch_size, rng)):
        _, record = split_gain.rollout(model, system, train_set.subset(batch), record=True)
        loss, grads1, grads2 = split_gain.parameter_grads(model, record, which=which)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(
                f"non-finite training loss ({epoch_label}, phase {which}, batch {b})",
                batch=b, phase=which)
        adam.step(params, grads1 if which == "g1" else grads2)
        losses.append(loss)
    log.add(cycle=epoch_label, phase=which, train_loss=float(np.mean(losses)))


def train_split_gain(data, config: TrainConfig, system: SystemModel | None = None):
    """Alternating optimization of the split estimator; returns (model, log).

    Phase A updates the state-side factor with the innovation-side factor
    frozen; phase B does the reverse. Alternation stops when the relative
    validation-loss change over a full cycle drops below ``cycle_tol`` or
    after ``max_cycles`` cycles. ``config.joint=True`` instead updates both
    factors every batch for ``config.epochs`` epochs (ablation mode).
    """
    system = _resolve_system(data, system)
    arrays = _as_arrays(data)
    num_landmarks = data.num_landmarks if isinstance(data, Dataset) else None
    train_set, val_set = _split_train_val(arrays, config.val_fraction)
    hidden = config.hidden_dim or DEFAULT_HIDDEN_SPLIT

    model = split_gain.create_model(system, hidden, config.seed, routing=config.routing,
                                    num_landmarks=num_landmarks)
    norm_dataset = data if (config.norm_source == "ekf" and isinstance(data, Dataset)) else None
    model.norm1, model.norm2 = fit_normalizers_split(
        model, system, train_set, config.pilot_trajectories, config.feature_clip,
        dataset=norm_dataset)

    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence((config.seed, _SHUFFLE_STREAM))))
    adam1 = Adam(model.g1.params, config.adam())
    adam2 = Adam(model.g2.params, config.adam())
    log = TrainingLog()
    best = (model.g1.clone_params(), model.g2.clone_params())

    def snapshot_if_best(val: float) -> None:
        nonlocal best
        if val < log.best_val:
            log.best_val = val
            log.best_entry = len(log.entries) - 1
            best = (model.g1.clone_params(), model.g2.clone_params())

    if config.joint:
        for epoch in range(1, config.epochs + 1):
            losses = []
            for b, batch in enumerate(_batches(len(train_set), config.batch_size, rng)):
                _, record = split_gain.rollout(model, system, train_set.subset(batch),
                                               record=True)
                loss, grads1, grads2 = split_gain.parameter_grads(model, record, "both")
                if not np.isfinite(loss):
                    raise TrainingDivergenceError(
                        f"non-finite training loss (epoch {epoch}, batch {b})",
                        epoch=epoch, batch=b)
                adam1.step(model.g1.params, grads1)
                adam2.step(model.g2.params, grads2)
                losses.append(loss)
            _check_finite_params(model.g1.params, epoch)
            _check_finite_params(model.g2.params, epoch)
            val = validation_loss(split_gain.run_filter, model, system, val_set) \
                if len(val_set) else float(np.mean(losses))
            log.add(epoch=epoch, train_loss=float(np.mean(losses)), val_loss=val)
            snapshot_if_best(val)
            if config.lr_decay_factor != 1.0 and epoch % config.lr_decay_every == 0:
                adam1.config.learning_rate *= config.lr_decay_factor
                adam2.config.learning_rate *= config.lr_decay_factor
    else:
        previous_val = None
        for cycle in range(1, config.max_cycles + 1):
            start = time.perf_counter()
            _split_phase(model, system, train_set, config, adam1, rng, "g1", cycle, log)
            _split_phase(model, system, train_set, config, adam2, rng, "g2", cycle, log)
            _check_finite_params(model.g1.params, cycle)
            _check_finite_params(model.g2.params, cycle)
            val = validation_loss(split_gain.run_filter, model, system, val_set) \
                if len(val_set) else log.entries[-1]["train_loss"]
            log.add(cycle=cycle, val_loss=val, seconds=time.perf_counter() - start)
            snapshot_if_best(val)
            if config.lr_decay_factor != 1.0 and cycle % config.lr_decay_every == 0:
                adam1.config.learning_rate *= config.lr_decay_factor
                adam2.config.learning_rate *= config.lr_decay_factor
            if previous_val is not None and np.isfinite(previous_val) and previous_val > 0:
                if abs(previous_val - val) / previous_val < config.cycle_tol:
                    break
            previous_val = val
    model.g1.params, model.g2.params = best
    return model, log
