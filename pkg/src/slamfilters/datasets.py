"""Synthetic trajectory dataset generation, corruption, and persistence.

Every random draw flows through a counter-based Philox4x64-10 generator keyed
by ``numpy.random.SeedSequence((seed, index))`` so that trajectory ``index``
is reproducible bit-for-bit regardless of how many trajectories are requested
or in which order they are produced. The on-disk format is a JSON header line
followed by one JSON record per trajectory (see README for the byte-exact
layout); floats survive the round trip exactly because records are written
with ``repr``-precision decimals.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .errors import DatasetFormatError, DatasetVersionError
from .geometry import measure, measurement_dim, motion_step, state_dim, wrap_angle
from .noise import NoiseConfig, measurement_noise_stds, process_noise_stds

DATASET_FORMAT = "slam-traj"
DATASET_VERSION = 1
GENERATOR_NAME = "numpy Philox4x64-10 via SeedSequence((seed, trajectory_index))"

# Stream tag separating association-error draws from generation draws.
_SWAP_STREAM = 0xA550C


@dataclass(frozen=True, slots=True)
class ScenarioConfig:
    """Shape of one synthetic scenario.

    Landmarks are drawn without replacement from the integer grid
    ``[box_low, box_high]^2``; the agent starts at the origin with zero
    heading and moves with constant speed and i.i.d. uniform heading
    increments, one step per second.
    """

    num_landmarks: int
    num_steps: int
    num_trajectories: int
    speed: float
    seed: int
    box_low: int = -30
    box_high: int = 30
    p_switch: float = 0.0

    def __post_init__(self):
        if self.num_landmarks < 1:
            raise ValueError("num_landmarks must be >= 1")
        if self.num_steps < 1 or self.num_trajectories < 1:
            raise ValueError("num_steps and num_trajectories must be >= 1")
        if not 0.0 <= self.p_switch <= 1.0:
            raise ValueError("p_switch must lie in [0, 1]")
        if self.box_high < self.box_low:
            raise ValueError("landmark box is empty")
        side = self.box_high - self.box_low + 1
        if self.num_landmarks > side * side:
            raise ValueError(
                f"cannot place {self.num_landmarks} distinct landmarks on a {side}x{side} grid"
            )


@dataclass(frozen=True, slots=True)
class NoiseSampling:
    """Noise specification where the variance scales may be per-trajectory ranges.

    A tuple ``(low, high)`` is sampled log-uniformly once per trajectory so
    the training data spans noise scales evenly in dB; a plain float is used
    as-is for every trajectory.
    """

    sigma_w2: float | tuple[float, float]
    sigma_v2: float | tuple[float, float]
    q2: float
    r2: float

    def resolve(self, rng: np.random.Generator) -> NoiseConfig:
        return NoiseConfig(
            sigma_w2=_draw(self.sigma_w2, rng),
            sigma_v2=_draw(self.sigma_v2, rng),
            q2=self.q2,
            r2=self.r2,
        )

    def to_json(self) -> dict:
        def enc(v):
            return list(v) if isinstance(v, tuple) else v

        return {
            "sigma_w2": enc(self.sigma_w2),
            "sigma_v2": enc(self.sigma_v2),
            "q2": self.q2,
            "r2": self.r2,
        }

    @classmethod
    def from_json(cls, data: dict) -> "NoiseSampling":
        def dec(v):
            return tuple(v) if isinstance(v, list) else v

        return cls(dec(data["sigma_w2"]), dec(data["sigma_v2"]), data["q2"], data["r2"])


def _draw(spec, rng: np.random.Generator) -> float:
    """Resolve a fixed-or-range variance spec; ranges consume one uniform."""
    if isinstance(spec, tuple):
        low, high = spec
        if low <= 0 or high < low:
            raise ValueError(f"invalid sampling range {spec}")
        if low == high:
            return float(low)
        return float(np.exp(rng.uniform(np.log(low), np.log(high))))
    return float(spec)


def as_sampling(noise: NoiseConfig | NoiseSampling) -> NoiseSampling:
    if isinstance(noise, NoiseSampling):
        return noise
    return NoiseSampling(noise.sigma_w2, noise.sigma_v2, noise.q2, noise.r2)


@dataclass(slots=True)
class Trajectory:
    """Ground truth and observations for one run, plus the realized noise."""

    states: np.ndarray             # (T, 3+2M)
    controls: np.ndarray           # (T, 2) as [v, dtheta]; controls[t] drives t -> t+1
    measurements: np.ndarray       # (T, 2M)
    landmarks: np.ndarray          # (M, 2)
    process_noise: np.ndarray      # (T, 3)
    measurement_noise: np.ndarray  # (T, 2M)
    noise: NoiseConfig

    @property
    def num_landmarks(self) -> int:
        return len(self.landmarks)

    @property
    def num_steps(self) -> int:
        return len(self.states)

    def initial_state(self) -> np.ndarray:
        """The known time-zero state: origin pose with the true landmarks."""
        return np.concatenate([np.zeros(3), self.landmarks.ravel()])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.noise == other.noise
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.controls, other.controls)
            and np.array_equal(self.measurements, other.measurements)
            and np.array_equal(self.landmarks, other.landmarks)
            and np.array_equal(self.process_noise, other.process_noise)
            and np.array_equal(self.measurement_noise, other.measurement_noise)
        )


@dataclass(slots=True)
class Dataset:
    scenario: ScenarioConfig
    noise_spec: NoiseSampling
    trajectories: list[Trajectory] = field(default_factory=list)
    injected: dict | None = None  # {"p_switch": float, "seed": int} when corrupted

    @property
    def num_landmarks(self) -> int:
        return self.scenario.num_landmarks

    def __len__(self) -> int:
        return len(self.trajectories)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.scenario == other.scenario
            and self.noise_spec == other.noise_spec
            and self.injected == other.injected
            and self.trajectories == other.trajectories
        )


def _trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, index))))


def _generate_trajectory(scenario: ScenarioConfig, sampling: NoiseSampling,
                         index: int) -> Trajectory:
    rng = _trajectory_rng(scenario.seed, index)
    m, steps = scenario.num_landmarks, scenario.num_steps

    # Draw order is fixed and documented: landmarks, noise scales, headings,
    # process noise, measurement noise.
    side = scenario.box_high - scenario.box_low + 1
    cells = rng.choice(side * side, size=m, replace=False)
    landmarks = np.column_stack(
        [cells // side + scenario.box_low, cells % side + scenario.box_low]
    ).astype(float)
    noise_cfg = sampling.resolve(rng)
    dthetas = rng.uniform(-np.pi, np.pi, size=steps)
    w = rng.standard_normal((steps, 3)) * process_noise_stds(noise_cfg)
    v = rng.standard_normal((steps, 2 * m)) * measurement_noise_stds(noise_cfg, m)

    controls = np.column_stack([np.full(steps, float(scenario.speed)), dthetas])
    states = np.empty((steps, state_dim(m)))
    measurements = np.empty((steps, measurement_dim(m)))
    state = np.concatenate([np.zeros(3), landmarks.ravel()])
    for t in range(steps):
        state = motion_step(state, controls[t], w[t])
        states[t] = state
        y = measure(state) + v[t]
        y[1::2] = wrap_angle(y[1::2])
        measurements[t] = y
    return Trajectory(states, controls, measurements, landmarks, w, v, noise_cfg)


def generate_dataset(scenario: ScenarioConfig,
                     noise: NoiseConfig | NoiseSampling) -> Dataset:
    """Generate ``scenario.num_trajectories`` independent trajectories.

    Deterministic given ``scenario.seed``; trajectory ``i`` does not depend
    on how many trajectories are requested. If ``scenario.p_switch`` is
    positive the measurements are corrupted by landmark-association swaps
    before the dataset is returned.
    """
    sampling = as_sampling(noise)
    ds = Dataset(
        scenario=scenario,
        noise_spec=sampling,
        trajectories=[
            _generate_trajectory(scenario, sampling, i)
            for i in range(scenario.num_trajectories)
        ],
    )
    if scenario.p_switch > 0.0:
        ds = inject_association_errors(ds, scenario.p_switch, scenario.seed)
    return ds


def inject_association_errors(ds: Dataset, p_switch: float, seed: int) -> Dataset:
    """Swap the measurement pairs of a random landmark pair, per step.

    Each time step independently is corrupted with probability ``p_switch``
    by exchanging the (range, bearing) slots of two distinct landmarks drawn
    uniformly at random. Ground-truth states are untouched.
    """
    if ds.num_landmarks < 2:
        raise ValueError("association errors require at least two landmarks")
    if not 0.0 <= p_switch <= 1.0:
        raise ValueError("p_switch must lie in [0, 1]")
    out: list[Trajectory] = []
    for i, traj in enumerate(ds.trajectories):
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((seed, _SWAP_STREAM, i)))
        )
        meas = traj.measurements.copy()
        for t in range(traj.num_steps):
            if rng.random() < p_switch:
                a, b = rng.choice(traj.num_landmarks, size=2, replace=False)
                sa, sb = slice(2 * a, 2 * a + 2), slice(2 * b, 2 * b + 2)
                meas[t, sa], meas[t, sb] = meas[t, sb].copy(), meas[t, sa].copy()
        out.append(replace(traj, measurements=meas))
    return Dataset(
        scenario=ds.scenario,
        noise_spec=ds.noise_spec,
        trajectories=out,
        injected={"p_switch": p_switch, "seed": seed},
    )


def _scenario_to_json(s: ScenarioConfig) -> dict:
    return {
        "num_landmarks": s.num_landmarks,
        "num_steps": s.num_steps,
        "num_trajectories": s.num_trajectories,
        "speed": s.speed,
        "seed": s.seed,
        "box_low": s.box_low,
        "box_high": s.box_high,
        "p_switch": s.p_switch,
    }


def _scenario_from_json(d: dict) -> ScenarioConfig:
    return ScenarioConfig(**d)


def save_dataset(ds: Dataset, path) -> None:
    """Write header + one JSON record per trajectory; floats round-trip exactly."""
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "generator": GENERATOR_NAME,
        "scenario": _scenario_to_json(ds.scenario),
        "noise": ds.noise_spec.to_json(),
        "injected": ds.injected,
        "num_trajectories": len(ds.trajectories),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for traj in ds.trajectories:
            record = {
                "sigma_w2": traj.noise.sigma_w2,
                "sigma_v2": traj.noise.sigma_v2,
                "q2": traj.noise.q2,
                "r2": traj.noise.r2,
                "landmarks": traj.landmarks.tolist(),
                "states": traj.states.tolist(),
                "controls": traj.controls.tolist(),
                "measurements": traj.measurements.tolist(),
                "process_noise": traj.process_noise.tolist(),
                "measurement_noise": traj.measurement_noise.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def _record_array(record: dict, key: str, shape: tuple, index: int) -> np.ndarray:
    try:
        arr = np.asarray(record[key], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"record {index}: bad field {key!r}: {exc}", record=index)
    if arr.shape != shape:
        raise DatasetFormatError(
            f"record {index}: field {key!r} has shape {arr.shape}, expected {shape}",
            record=index,
        )
    return arr


def load_dataset(path) -> Dataset:
    """Inverse of :func:`save_dataset`; errors name the offending record."""
    with open(path, "r", encoding="utf-8") as fh:
        return _load_dataset_stream(fh)


def _load_dataset_stream(fh: io.TextIOBase) -> Dataset:
    first = fh.readline()
    if not first.strip():
        raise DatasetFormatError("empty dataset file")
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"unreadable header: {exc}")
    if header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"not a {DATASET_FORMAT} file")
    if header.get("version") != DATASET_VERSION:
        raise DatasetVersionError(
            f"unsupported dataset version {header.get('version')!r}; "
            f"this build reads version {DATASET_VERSION}"
        )
    try:
        scenario = _scenario_from_json(header["scenario"])
        noise_spec = NoiseSampling.from_json(header["noise"])
        count = int(header["num_trajectories"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed header: {exc}")

    m, steps = scenario.num_landmarks, scenario.num_steps
    n, md = state_dim(m), measurement_dim(m)
    trajectories: list[Trajectory] = []
    for i in range(count):
        line = fh.readline()
        if not line.strip():
            raise DatasetFormatError(f"record {i}: file truncated", record=i)
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"record {i}: unreadable: {exc}", record=i)
        try:
            noise_cfg = NoiseConfig(
                sigma_w2=record["sigma_w2"], sigma_v2=record["sigma_v2"],
                q2=record["q2"], r2=record["r2"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"record {i}: bad noise fields: {exc}", record=i)
        trajectories.append(Trajectory(
            states=_record_array(record, "states", (steps, n), i),
            controls=_record_array(record, "controls", (steps, 2), i),
            measurements=_record_array(record, "measurements", (steps, md), i),
            landmarks=_record_array(record, "landmarks", (m, 2), i),
            process_noise=_record_array(record, "process_noise", (steps, 3), i),
            measurement_noise=_record_array(record, "measurement_noise", (steps, md), i),
            noise=noise_cfg,
        ))
    return Dataset(
        scenario=scenario,
        noise_spec=noise_spec,
        trajectories=trajectories,
        injected=header.get("injected"),
    )


def dataset_metadata(path) -> dict:
    """Read only the header of a dataset file."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise DatasetFormatError("empty dataset file")
    try:
        return json.loads(first)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"unreadable header: {exc}")
