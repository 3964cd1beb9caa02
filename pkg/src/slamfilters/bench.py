"""Experiment runner: sweep grids of test conditions across estimators.

For each grid cell a fresh test dataset is generated from the cell's
configuration and every requested estimator is scored on it with the dB
metric. Results are emitted as CSV rows (one per cell x estimator) plus a
JSON manifest carrying the full resolved configuration per config hash, so
any row can be regenerated exactly from the file alone.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import learned_gain, split_gain
from .datasets import Dataset, ScenarioConfig, generate_dataset
from .ekf import mismatched_filter_model, run_filter, slam_filter_model
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    FilterDivergenceError,
    IllConditionedError,
)
from .metrics import PERFECT, mse_db
from .noise import NoiseConfig
from .rollout import TrajectoryArrays

ESTIMATORS = ("A1", "A2", "A3", "A4")
ESTIMATOR_LABELS = {
    "A1": "ekf-exact",
    "A2": "ekf-mismatch",
    "A3": "learned-gain",
    "A4": "split-gain",
}

SWEEP_VARIABLES = ("inv_sigma_v2_db", "r2_db", "p_switch")

CSV_COLUMNS = ("sweep_variable", "sweep_value", "estimator", "label", "mu_db",
               "sigma_db", "num_trajectories", "num_diverged", "seed",
               "config_hash", "runtime_s")


@dataclass
class ExperimentSpec:
    name: str
    estimators: list[str]
    sweep_variable: str
    sweep_values: list[float]
    num_landmarks: int = 5
    num_steps: int = 50
    num_trajectories: int = 500
    speed: float = 1.0
    seed: int = 0
    sigma_w2: float = 1e-3
    sigma_v2: float = 1e-3
    q2: float = 10.0
    r2: float = 1e3
    p_switch: float = 0.0
    checkpoints: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.sweep_values:
            raise ConfigError("sweep_values must be non-empty", field="sweep_values")
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ConfigError(
                f"unknown sweep variable {self.sweep_variable!r}; "
                f"expected one of {SWEEP_VARIABLES}", field="sweep_variable")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {bad}", field="estimators")


def table2_spec(checkpoints: dict[str, str] | None = None, **overrides) -> ExperimentSpec:
    """Observation-noise sweep: exact stats vary, mismatched EKF stays fixed."""
    kw = dict(name="statistical-mismatch-sigma_v2", estimators=list(ESTIMATORS),
              sweep_variable="inv_sigma_v2_db",
              sweep_values=[15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
              sigma_w2=1e-3, q2=10.0, r2=1e3, checkpoints=checkpoints or {})
    kw.update(overrides)
    return ExperimentSpec(**kw)


def table3_spec(checkpoints: dict[str, str] | None = None, **overrides) -> ExperimentSpec:
    """Noise-heterogeneity sweep over the range-noise factor."""
    kw = dict(name="statistical-mismatch-r2", estimators=list(ESTIMATORS),
              sweep_variable="r2_db",
              sweep_values=[20.0, 25.0, 30.0, 35.0, 40.0],
              sigma_w2=1e-3, sigma_v2=1e-3, q2=10.0, checkpoints=checkpoints or {})
    kw.update(overrides)
    return ExperimentSpec(**kw)


def table4_spec(checkpoints: dict[str, str] | None = None, **overrides) -> ExperimentSpec:
    """Landmark-association-error sweep (physical model mismatch)."""
    kw = dict(name="association-error", estimators=["A1", "A3", "A4"],
              sweep_variable="p_switch", sweep_values=[0.01, 0.03, 0.05],
              num_landmarks=10, sigma_w2=1e-4, sigma_v2=1e-4, q2=1.0, r2=1.0,
              checkpoints=checkpoints or {})
    kw.update(overrides)
    return ExperimentSpec(**kw)


def resolve_cell(spec: ExperimentSpec, value: float):
    """Scenario and noise configuration for one sweep value."""
    sigma_v2, r2, p_switch = spec.sigma_v2, spec.r2, spec.p_switch
    if spec.sweep_variable == "inv_sigma_v2_db":
        sigma_v2 = 10.0 ** (-value / 10.0)
    elif spec.sweep_variable == "r2_db":
        r2 = 10.0 ** (value / 10.0)
    elif spec.sweep_variable == "p_switch":
        p_switch = float(value)
    scenario = ScenarioConfig(
        num_landmarks=spec.num_landmarks, num_steps=spec.num_steps,
        num_trajectories=spec.num_trajectories, speed=spec.speed,
        seed=spec.seed, p_switch=p_switch)
    noise = NoiseConfig(sigma_w2=spec.sigma_w2, sigma_v2=sigma_v2, q2=spec.q2, r2=r2)
    return scenario, noise


def cell_config_hash(scenario: ScenarioConfig, noise: NoiseConfig, estimator: str) -> str:
    payload = {"scenario": asdict(scenario), "noise": asdict(noise),
               "estimator": estimator}
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
    return digest[:12]


@dataclass
class MetricRow:
    sweep_variable: str
    sweep_value: float
    estimator: str
    mu_db: object            # float or PERFECT sentinel
    sigma_db: float
    num_trajectories: int
    num_diverged: int
    seed: int
    config_hash: str
    runtime_s: float

    def as_csv(self) -> list:
        mu = "perfect" if self.mu_db is PERFECT else f"{self.mu_db:.6f}"
        return [self.sweep_variable, self.sweep_value, self.estimator,
                ESTIMATOR_LABELS[self.estimator], mu, f"{self.sigma_db:.6f}",
                self.num_trajectories, self.num_diverged, self.seed,
                self.config_hash, f"{self.runtime_s:.3f}"]


def _ekf_estimates(dataset: Dataset, estimator: str):
    """Per-trajectory EKF runs; diverged trajectories come back as NaN rows."""
    m = dataset.num_landmarks
    steps = dataset.scenario.num_steps
    n = 3 + 2 * m
    estimates = np.full((len(dataset), steps, n), np.nan)
    diverged = []
    model_cache: dict[NoiseConfig, object] = {}
    for i, traj in enumerate(dataset.trajectories):
        if estimator == "A1":
            model = model_cache.get(traj.noise)
            if model is None:
                model = slam_filter_model(traj.noise, m)
                model_cache[traj.noise] = model
        else:
            model = model_cache.get("A2")
            if model is None:
                model = mismatched_filter_model(m)
                model_cache["A2"] = model
        try:
            estimates[i] = run_filter(traj, model).means
        except (FilterDivergenceError, IllConditionedError, DegenerateGeometryError):
            diverged.append(i)
    return estimates, diverged


def _model_estimates(model, arrays: TrajectoryArrays):
    if isinstance(model, split_gain.SplitGainModel):
        estimates = split_gain.run_filter(model, arrays)
    else:
        estimates = learned_gain.run_filter(model, arrays)
    finite = np.all(np.isfinite(estimates), axis=(1, 2))
    return estimates, list(np.flatnonzero(~finite))


def estimate_dataset(estimator: str, dataset: Dataset,
                     arrays: TrajectoryArrays | None = None, model=None):
    """Estimates (L, T, n) and the indices of diverged trajectories."""
    if estimator in ("A1", "A2"):
        return _ekf_estimates(dataset, estimator)
    if model is None:
        raise ConfigError(f"estimator {estimator} needs a trained model/checkpoint",
                          field="checkpoints")
    if getattr(model, "num_landmarks", None) not in (None, dataset.num_landmarks):
        raise ConfigError(
            f"checkpoint was trained for M={model.num_landmarks}, dataset has "
            f"M={dataset.num_landmarks}", field="checkpoints")
    if arrays is None:
        arrays = TrajectoryArrays.from_dataset(dataset)
    return _model_estimates(model, arrays)


def _load_models(spec: ExperimentSpec, models: dict | None) -> dict:
    from .checkpoints import load_model

    out = dict(models or {})
    for estimator in spec.estimators:
        if estimator in ("A1", "A2") or estimator in out:
            continue
        path = spec.checkpoints.get(estimator)
        if path is None:
            raise ConfigError(f"no checkpoint configured for estimator {estimator}",
                              field="checkpoints")
        out[estimator], _ = load_model(path)
    return out


def run_experiment(spec: ExperimentSpec, models: dict | None = None,
                   progress=None) -> list[MetricRow]:
    """Evaluate every (cell, estimator) pair; rows come back in grid order."""
    models = _load_models(spec, models)
    rows: list[MetricRow] = []
    for value in spec.sweep_values:
        scenario, noise = resolve_cell(spec, value)
        dataset = generate_dataset(scenario, noise)
        arrays = TrajectoryArrays.from_dataset(dataset)
        truth = arrays.states
        for estimator in spec.estimators:
            start = time.perf_counter()
            estimates, diverged = estimate_dataset(estimator, dataset, arrays,
                                                   models.get(estimator))
            keep = np.ones(len(dataset), dtype=bool)
            keep[diverged] = False
            if np.any(keep):
                mu, sigma = mse_db(truth[keep], estimates[keep])
            else:
                mu, sigma = float("nan"), float("nan")
            row = MetricRow(
                sweep_variable=spec.sweep_variable, sweep_value=float(value),
                estimator=estimator, mu_db=mu, sigma_db=sigma,
                num_trajectories=int(np.sum(keep)), num_diverged=len(diverged),
                seed=spec.seed, config_hash=cell_config_hash(scenario, noise, estimator),
                runtime_s=time.perf_counter() - start)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def write_csv(rows: list[MetricRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())


def write_manifest(spec: ExperimentSpec, rows: list[MetricRow], path) -> None:
    cells = {}
    for value in spec.sweep_values:
        scenario, noise = resolve_cell(spec, value)
        for estimator in spec.estimators:
            cells[cell_config_hash(scenario, noise, estimator)] = {
                "scenario": asdict(scenario), "noise": asdict(noise),
                "estimator": estimator,
            }
    manifest = {
        "spec": asdict(spec),
        "cells": cells,
        "rows": [dict(zip(CSV_COLUMNS, r.as_csv())) for r in rows],
        "sigma_definition": "stddev (ddof=1) of per-trajectory dB MSE values",
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
