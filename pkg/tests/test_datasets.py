import json

import numpy as np
import pytest

from slamfilters.datasets import (
    Dataset,
    NoiseSampling,
    ScenarioConfig,
    generate_dataset,
    inject_association_errors,
    load_dataset,
    save_dataset,
)
from slamfilters.errors import DatasetFormatError, DatasetVersionError
from slamfilters.geometry import measure, motion_step, wrap_angle
from slamfilters.noise import NoiseConfig, build_Q, build_R


def _scenario(**kw):
    base = dict(num_landmarks=5, num_steps=20, num_trajectories=5, speed=1.0, seed=42)
    base.update(kw)
    return ScenarioConfig(**base)


FIXED = NoiseConfig(sigma_w2=1e-3, sigma_v2=1e-3, q2=10.0, r2=1e3)


class TestNoiseConfig:
    def test_zero_variances_allowed(self):
        NoiseConfig(0.0, 0.0, 1.0, 1.0)

    @pytest.mark.parametrize("kw", [
        dict(sigma_w2=-1e-3), dict(sigma_v2=-1.0), dict(q2=0.0), dict(r2=-2.0),
        dict(sigma_w2=np.nan),
    ])
    def test_invalid_rejected(self, kw):
        base = dict(sigma_w2=1e-3, sigma_v2=1e-3, q2=10.0, r2=1e3)
        base.update(kw)
        with pytest.raises(ValueError):
            NoiseConfig(**base)


class TestBuildQ:
    def test_unit_factors(self):
        np.testing.assert_array_equal(
            build_Q(NoiseConfig(1.0, 1.0, 1.0, 1.0), 1), np.diag([1, 1, 1, 0, 0]))

    def test_heterogeneous_block(self):
        q = build_Q(NoiseConfig(1e-3, 1.0, 10.0, 1.0), 5)
        np.testing.assert_allclose(np.diag(q)[:3], [1e-2, 1e-2, 1e-3])
        assert np.all(q[3:, :] == 0) and np.all(q[:, 3:] == 0)

    def test_psd_and_rank(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            cfg = NoiseConfig(rng.uniform(1e-4, 1e-1), 1.0, rng.uniform(0.1, 100),
                              rng.uniform(0.1, 100))
            q = build_Q(cfg, 4)
            eig = np.linalg.eigvalsh(q)
            assert eig.min() >= -1e-15
            assert np.sum(eig > 1e-12 * eig.max()) <= 3


class TestBuildR:
    def test_unit_factors(self):
        np.testing.assert_array_equal(build_R(NoiseConfig(1.0, 1.0, 1.0, 1.0), 2), np.eye(4))

    def test_heterogeneous_pattern(self):
        r = build_R(NoiseConfig(1.0, 1e-3, 1.0, 1e3), 5)
        np.testing.assert_allclose(np.diag(r), np.tile([1.0, 1e-3], 5))

    def test_kronecker_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            cfg = NoiseConfig(1.0, rng.uniform(1e-4, 1e-1), 1.0, rng.uniform(0.1, 1e4))
            m = int(rng.integers(1, 7))
            expected = np.kron(np.eye(m), cfg.sigma_v2 * np.diag([cfg.r2, 1.0]))
            np.testing.assert_array_equal(build_R(cfg, m), expected)


class TestGeneration:
    def test_shapes(self):
        ds = generate_dataset(_scenario(), FIXED)
        assert len(ds) == 5
        traj = ds.trajectories[0]
        assert traj.states.shape == (20, 13)
        assert traj.controls.shape == (20, 2)
        assert traj.measurements.shape == (20, 10)
        assert traj.landmarks.shape == (5, 2)

    def test_determinism(self):
        a = generate_dataset(_scenario(), FIXED)
        b = generate_dataset(_scenario(), FIXED)
        assert a == b

    def test_trajectory_seeding_independent_of_count(self):
        # trajectory i is identical regardless of how many are generated
        a = generate_dataset(_scenario(num_trajectories=3), FIXED)
        b = generate_dataset(_scenario(num_trajectories=5), FIXED)
        assert a.trajectories == b.trajectories[:3]

    def test_landmarks_on_grid_distinct(self):
        ds = generate_dataset(_scenario(num_landmarks=8), FIXED)
        for traj in ds.trajectories:
            assert np.array_equal(traj.landmarks, np.round(traj.landmarks))
            assert np.all(np.abs(traj.landmarks) <= 30)
            assert len({tuple(p) for p in traj.landmarks.tolist()}) == 8

    def test_grid_capacity_enforced(self):
        with pytest.raises(ValueError):
            ScenarioConfig(num_landmarks=10, num_steps=1, num_trajectories=1,
                           speed=1.0, seed=0, box_low=0, box_high=2)

    def test_zero_noise_degenerate(self):
        ds = generate_dataset(_scenario(), NoiseConfig(0.0, 0.0, 10.0, 1e3))
        traj = ds.trajectories[0]
        state = traj.initial_state()
        for t in range(traj.num_steps):
            state = motion_step(state, traj.controls[t])
            np.testing.assert_array_equal(traj.states[t], state)
            np.testing.assert_array_equal(traj.measurements[t], measure(state))

    def test_reconstruction_bit_exact(self):
        ds = generate_dataset(_scenario(), FIXED)
        for traj in ds.trajectories:
            state = traj.initial_state()
            for t in range(traj.num_steps):
                state = motion_step(state, traj.controls[t], traj.process_noise[t])
                np.testing.assert_array_equal(traj.states[t], state)
                y = measure(state) + traj.measurement_noise[t]
                y[1::2] = wrap_angle(y[1::2])
                np.testing.assert_array_equal(traj.measurements[t], y)

    def test_controls_constant_speed_uniform_heading(self):
        ds = generate_dataset(_scenario(speed=5.0, num_trajectories=50), FIXED)
        dthetas = np.concatenate([t.controls[:, 1] for t in ds.trajectories])
        assert all(np.all(t.controls[:, 0] == 5.0) for t in ds.trajectories)
        assert np.all(np.abs(dthetas) <= np.pi)

    def test_ranged_sigmas_sampled_log_uniform_within_bounds(self):
        noise = NoiseSampling(sigma_w2=(5e-4, 5e-2), sigma_v2=(5e-4, 5e-2),
                              q2=10.0, r2=1e3)
        ds = generate_dataset(_scenario(num_trajectories=200), noise)
        w = np.array([t.noise.sigma_w2 for t in ds.trajectories])
        v = np.array([t.noise.sigma_v2 for t in ds.trajectories])
        assert np.all((w >= 5e-4) & (w <= 5e-2))
        assert np.all((v >= 5e-4) & (v <= 5e-2))
        # spread across the log range rather than piled at one end
        assert np.quantile(np.log10(w), 0.25) < np.log10(5e-3) < np.quantile(np.log10(w), 0.9)

    def test_process_noise_moments_match_Q(self):
        scenario = _scenario(num_trajectories=1000, num_steps=20, num_landmarks=2)
        ds = generate_dataset(scenario, FIXED)
        noise = np.concatenate([t.process_noise for t in ds.trajectories])
        emp = np.cov(noise.T, ddof=0)
        expected = build_Q(FIXED, 2)[:3, :3]
        rel = np.linalg.norm(emp - expected) / np.linalg.norm(expected)
        assert rel < 0.10


class TestAssociationErrors:
    def test_zero_probability_unchanged(self):
        ds = generate_dataset(_scenario(), FIXED)
        out = inject_association_errors(ds, 0.0, seed=1)
        assert out.trajectories == ds.trajectories
        assert out.injected == {"p_switch": 0.0, "seed": 1}

    def test_forced_swap_two_landmarks(self):
        ds = generate_dataset(_scenario(num_landmarks=2), FIXED)
        out = inject_association_errors(ds, 1.0, seed=2)
        for before, after in zip(ds.trajectories, out.trajectories):
            np.testing.assert_array_equal(after.measurements[:, 0:2],
                                          before.measurements[:, 2:4])
            np.testing.assert_array_equal(after.measurements[:, 2:4],
                                          before.measurements[:, 0:2])
            np.testing.assert_array_equal(after.states, before.states)

    def test_requires_two_landmarks(self):
        ds = generate_dataset(_scenario(num_landmarks=1), FIXED)
        with pytest.raises(ValueError):
            inject_association_errors(ds, 0.5, seed=0)

    def test_empirical_swap_frequency(self):
        scenario = _scenario(num_landmarks=10, num_steps=50, num_trajectories=1000)
        ds = generate_dataset(scenario, FIXED)
        out = inject_association_errors(ds, 0.05, seed=3)
        switched = 0
        total = 0
        for before, after in zip(ds.trajectories, out.trajectories):
            changed = np.any(before.measurements != after.measurements, axis=1)
            switched += int(changed.sum())
            total += before.num_steps
        assert abs(switched / total - 0.05) <= 0.01

    def test_generation_applies_p_switch(self):
        clean = generate_dataset(_scenario(), FIXED)
        corrupted = generate_dataset(_scenario(p_switch=0.5), FIXED)
        assert corrupted.injected is not None
        assert any(a != b for a, b in zip(clean.trajectories, corrupted.trajectories))


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        noise = NoiseSampling(sigma_w2=(5e-4, 5e-2), sigma_v2=1e-3, q2=10.0, r2=1e3)
        ds = generate_dataset(_scenario(), noise)
        path = tmp_path / "ds.jsonl"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded == ds

    def test_save_deterministic_bytes(self, tmp_path):
        ds = generate_dataset(_scenario(), FIXED)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(ds, p1)
        save_dataset(ds, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(DatasetFormatError):
            load_dataset(path)

    def test_version_mismatch(self, tmp_path):
        ds = generate_dataset(_scenario(num_trajectories=1), FIXED)
        path = tmp_path / "ds.jsonl"
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["version"] = 99
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(DatasetVersionError):
            load_dataset(path)

    def test_truncated_file_names_record(self, tmp_path):
        ds = generate_dataset(_scenario(num_trajectories=3), FIXED)
        path = tmp_path / "ds.jsonl"
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:2]) + "\n")  # header + first record only
        with pytest.raises(DatasetFormatError) as err:
            load_dataset(path)
        assert err.value.record == 1

    def test_malformed_record_names_record(self, tmp_path):
        ds = generate_dataset(_scenario(num_trajectories=2), FIXED)
        path = tmp_path / "ds.jsonl"
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        record = json.loads(lines[2])
        record["states"] = record["states"][:3]  # wrong shape
        lines[2] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError) as err:
            load_dataset(path)
        assert err.value.record == 1
