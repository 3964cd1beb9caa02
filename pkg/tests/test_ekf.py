import numpy as np
import pytest

from slamfilters.datasets import ScenarioConfig, Trajectory, generate_dataset
from slamfilters.ekf import (
    FilterModel,
    GaussianBelief,
    SystemModel,
    initial_belief,
    kalman_gain,
    mismatched_filter_model,
    predict,
    run_filter,
    slam_filter_model,
    update,
)
from slamfilters.errors import FilterDivergenceError, IllConditionedError
from slamfilters.metrics import mse_db, squared_state_errors
from slamfilters.noise import NoiseConfig
from slamfilters.rollout import TrajectoryArrays

from conftest import random_slam_state

EXACT = NoiseConfig(sigma_w2=1e-3, sigma_v2=1e-3, q2=10.0, r2=1e3)


def linear_filter_model(A, H, Q, R):
    """Linear-Gaussian specialization: f(x)=Ax, h(x)=Hx, no angles."""
    system = SystemModel(
        state_dim=A.shape[0], measurement_dim=H.shape[0],
        motion=lambda x, u: x @ A.T,
        measurement=lambda x: x @ H.T,
        measurement_jacobian=lambda x: H if x.ndim == 1 else np.broadcast_to(
            H, x.shape[:-1] + H.shape),
    )
    return FilterModel(system=system, motion_jacobian=lambda x, u: A, Q=Q, R=R)


def classical_kf(A, H, Q, R, x0, P0, measurements):
    """Separately coded textbook Kalman filter (explicit inverse)."""
    x, P = x0.copy(), P0.copy()
    means, covs = [], []
    for y in measurements:
        x = A @ x
        P = A @ P @ A.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ (y - H @ x)
        P = P - K @ S @ K.T
        means.append(x.copy())
        covs.append(P.copy())
    return np.array(means), np.array(covs)


def random_slam_belief(rng, num_landmarks=5):
    mean = random_slam_state(rng, num_landmarks)
    a = rng.standard_normal((len(mean), len(mean)))
    cov = a @ a.T / len(mean) + 0.1 * np.eye(len(mean))
    return GaussianBelief(mean, cov)


class TestPredict:
    def test_identity_dynamics(self):
        rng = np.random.default_rng(0)
        model = slam_filter_model(NoiseConfig(0.0, 1e-3, 1.0, 1.0), 5)
        belief = random_slam_belief(rng)
        out = predict(belief, (0.0, 0.0), model)
        np.testing.assert_array_equal(out.mean, belief.mean)
        np.testing.assert_allclose(out.cov, belief.cov, atol=1e-15)

    def test_zero_prior_cov_becomes_Q(self):
        rng = np.random.default_rng(1)
        model = slam_filter_model(EXACT, 5)
        belief = GaussianBelief(random_slam_state(rng), np.zeros((13, 13)))
        out = predict(belief, (1.0, 0.2), model)
        np.testing.assert_array_equal(out.cov, model.Q)

    def test_matches_dense_matrix_oracle(self):
        rng = np.random.default_rng(2)
        model = slam_filter_model(EXACT, 5)
        from slamfilters.geometry import jacobian_f, motion_step

        for _ in range(10):
            belief = random_slam_belief(rng)
            control = (rng.uniform(0, 3), rng.uniform(-1, 1))
            out = predict(belief, control, model)
            jac = jacobian_f(belief.mean, control)
            expected = np.einsum("ij,jk,lk->il", jac, belief.cov, jac) + model.Q
            expected = 0.5 * (expected + expected.T)
            np.testing.assert_allclose(out.cov, expected, atol=1e-12)
            np.testing.assert_allclose(out.mean, motion_step(belief.mean, control),
                                       atol=1e-15)


class TestKalmanGain:
    def test_scalar_algebra(self):
        belief = GaussianBelief(np.zeros(1), np.array([[1.0]]))
        gain, s = kalman_gain(belief, np.array([[1.0]]), np.array([[1.0]]))
        assert gain[0, 0] == pytest.approx(0.5, abs=1e-14)
        assert s[0, 0] == pytest.approx(2.0, abs=1e-14)

    def test_no_trust_limit(self):
        belief = GaussianBelief(np.zeros(1), np.array([[1.0]]))
        gain, _ = kalman_gain(belief, np.array([[1.0]]), np.array([[1e12]]))
        assert abs(gain[0, 0]) < 1e-11

    def test_defining_equation_residual(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n, m = 6, 4
            a = rng.standard_normal((n, n))
            cov = a @ a.T + n * np.eye(n)
            h = rng.standard_normal((m, n))
            b = rng.standard_normal((m, m))
            r = b @ b.T + m * np.eye(m)
            belief = GaussianBelief(np.zeros(n), cov)
            gain, s = kalman_gain(belief, h, r)
            assert np.max(np.abs(gain @ s - cov @ h.T)) < 1e-10

    def test_ill_conditioned_rejected(self):
        belief = GaussianBelief(np.zeros(2), np.eye(2))
        h = np.array([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(IllConditionedError) as err:
            kalman_gain(belief, h, 1e-14 * np.eye(2))
        assert err.value.condition is None or err.value.condition > 1e12


class TestUpdate:
    def test_zero_innovation_keeps_mean_shrinks_cov(self):
        rng = np.random.default_rng(4)
        model = slam_filter_model(EXACT, 5)
        belief = random_slam_belief(rng)
        y = model.system.measurement(belief.mean)
        out, info = update(belief, y, model)
        np.testing.assert_array_equal(out.mean, belief.mean)
        assert np.trace(out.cov) < np.trace(belief.cov)
        np.testing.assert_array_equal(info.innovation, np.zeros(10))

    def test_no_update_limit(self):
        rng = np.random.default_rng(5)
        noise = NoiseConfig(1e-3, 1e9, 10.0, 1.0)
        model = slam_filter_model(noise, 5)
        belief = random_slam_belief(rng)
        y = model.system.measurement(belief.mean) + rng.standard_normal(10)
        out, _ = update(belief, y, model)
        np.testing.assert_allclose(out.mean, belief.mean, atol=1e-7)

    def test_trace_never_increases(self):
        rng = np.random.default_rng(6)
        model = slam_filter_model(EXACT, 5)
        belief = random_slam_belief(rng)
        for _ in range(20):
            prior = predict(belief, (rng.uniform(0, 1), rng.uniform(-1, 1)), model)
            y = model.system.measurement(prior.mean) + 0.01 * rng.standard_normal(10)
            belief, _ = update(prior, y, model)
            assert np.trace(belief.cov) <= np.trace(prior.cov) + 1e-12

    def test_scalar_closed_form_oracle(self):
        a, c, q, r = 0.95, 2.0, 0.04, 0.25
        model = linear_filter_model(np.array([[a]]), np.array([[c]]),
                                    np.array([[q]]), np.array([[r]]))
        rng = np.random.default_rng(7)
        ys = rng.standard_normal(100)
        belief = GaussianBelief(np.array([0.3]), np.array([[1.5]]))
        x, p = 0.3, 1.5
        for t, yv in enumerate(ys):
            belief = predict(belief, None, model)
            belief, _ = update(belief, np.array([yv]), model)
            # hand-coded scalar recursion
            x = a * x
            p = a * p * a + q
            s = c * p * c + r
            k = p * c / s
            x = x + k * (yv - c * x)
            p = p - k * s * k
            assert belief.mean[0] == pytest.approx(x, abs=1e-12)
            assert belief.cov[0, 0] == pytest.approx(p, abs=1e-12)

    def test_non_finite_measurement_raises(self):
        rng = np.random.default_rng(8)
        model = slam_filter_model(EXACT, 5)
        belief = random_slam_belief(rng)
        y = model.system.measurement(belief.mean)
        y[0] = np.nan
        with pytest.raises(FilterDivergenceError):
            update(belief, y, model)


class TestLinearGaussianEquivalence:
    def test_matches_classical_kf_100_steps(self):
        rng = np.random.default_rng(9)
        n, m, steps = 4, 2, 100
        a = rng.standard_normal((n, n))
        a *= 0.9 / max(abs(np.linalg.eigvals(a)))
        h = rng.standard_normal((m, n))
        q = np.diag(rng.uniform(0.01, 0.1, n))
        r = np.diag(rng.uniform(0.05, 0.5, m))
        model = linear_filter_model(a, h, q, r)
        ys = rng.standard_normal((steps, m))
        x0 = rng.standard_normal(n)
        p0 = np.eye(n)

        traj = Trajectory(states=np.zeros((steps, n)), controls=np.zeros((steps, 2)),
                          measurements=ys, landmarks=np.zeros((1, 2)),
                          process_noise=np.zeros((steps, 3)),
                          measurement_noise=np.zeros((steps, m)),
                          noise=EXACT)
        result = run_filter(traj, model, init=GaussianBelief(x0, p0))
        oracle_means, _ = classical_kf(a, h, q, r, x0, p0, ys)
        assert np.max(np.abs(result.means - oracle_means)) < 1e-10


class TestRunFilter:
    def test_noiseless_truth_init_is_fixed_point(self):
        scenario = ScenarioConfig(num_landmarks=5, num_steps=20, num_trajectories=2,
                                  speed=1.0, seed=13)
        ds = generate_dataset(scenario, NoiseConfig(0.0, 0.0, 10.0, 1e3))
        model = slam_filter_model(EXACT, 5)
        for traj in ds.trajectories:
            init = GaussianBelief(traj.initial_state(),
                                  np.diag([1e-4] * 3 + [100.0] * 10))
            result = run_filter(traj, model, init=init)
            sq = squared_state_errors(traj.states, result.means)
            assert np.all(sq < 1e-16)

    def test_exact_statistics_smoke(self):
        scenario = ScenarioConfig(num_landmarks=5, num_steps=50, num_trajectories=3,
                                  speed=1.0, seed=14)
        ds = generate_dataset(scenario, EXACT)
        model = slam_filter_model(EXACT, 5)
        for traj in ds.trajectories:
            result = run_filter(traj, model)
            assert np.all(np.isfinite(result.means))
            assert np.all(np.isfinite(result.cov_traces))

    def test_mismatched_model_worse_than_exact(self, small_test_dataset):
        ds = small_test_dataset
        arrays = TrajectoryArrays.from_dataset(ds)
        exact = slam_filter_model(EXACT, 5)
        mismatched = mismatched_filter_model(5)
        est1 = np.stack([run_filter(t, exact).means for t in ds.trajectories])
        est2 = np.stack([run_filter(t, mismatched).means for t in ds.trajectories])
        mu1, _ = mse_db(arrays.states, est1)
        mu2, _ = mse_db(arrays.states, est2)
        assert mu2 > mu1

    def test_rerun_is_bit_identical(self, small_test_dataset):
        traj = small_test_dataset.trajectories[0]
        model = slam_filter_model(EXACT, 5)
        a = run_filter(traj, model)
        b = run_filter(traj, model)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.cov_traces, b.cov_traces)

    def test_divergence_error_carries_step(self):
        scenario = ScenarioConfig(num_landmarks=5, num_steps=10, num_trajectories=1,
                                  speed=1.0, seed=15)
        ds = generate_dataset(scenario, EXACT)
        traj = ds.trajectories[0]
        traj.measurements[4, 0] = np.nan
        model = slam_filter_model(EXACT, 5)
        with pytest.raises(FilterDivergenceError) as err:
            run_filter(traj, model)
        assert err.value.step == 4

    def test_bearing_wrap_no_jump(self):
        # landmark almost exactly behind the agent: true bearing ~ +pi,
        # predicted bearing ~ -pi; the wrapped innovation must be tiny.
        model = slam_filter_model(EXACT, 1)
        mean = np.array([0.0, 0.0, 0.0, -10.0, -1e-4])  # predicted bearing ~ -pi
        belief = GaussianBelief(mean, np.diag([1e-4] * 3 + [1.0, 1.0]))
        y = np.array([10.0, np.pi - 1e-4])  # measured bearing just below +pi
        out, info = update(belief, y, model)
        assert abs(info.innovation[1]) < 1e-2
        assert np.all(np.abs(out.mean - mean) < 1.0)
        assert -np.pi <= info.innovation[1] < np.pi

    def test_initial_belief_shapes(self, small_test_dataset):
        traj = small_test_dataset.trajectories[0]
        belief = initial_belief(traj.controls[0], traj.measurements[0], 5)
        assert belief.mean.shape == (13,)
        np.testing.assert_array_equal(belief.mean[:3], np.zeros(3))
        np.testing.assert_array_equal(np.diag(belief.cov),
                                      [1e-4] * 3 + [100.0] * 10)
