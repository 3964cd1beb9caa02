import numpy as np
import pytest

from slamfilters.datasets import NoiseSampling, ScenarioConfig, generate_dataset
from slamfilters.ekf import slam_system
from slamfilters.noise import NoiseConfig


@pytest.fixture(scope="session")
def small_test_dataset():
    """50 test-style trajectories at the exact-statistics cell."""
    scenario = ScenarioConfig(num_landmarks=5, num_steps=20, num_trajectories=50,
                              speed=1.0, seed=910)
    noise = NoiseConfig(sigma_w2=1e-3, sigma_v2=1e-3, q2=10.0, r2=1e3)
    return generate_dataset(scenario, noise)


@pytest.fixture(scope="session")
def small_train_dataset():
    """A reduced training-style dataset (ranged noise scales, fast to filter)."""
    scenario = ScenarioConfig(num_landmarks=5, num_steps=20, num_trajectories=240,
                              speed=5.0, seed=911)
    noise = NoiseSampling(sigma_w2=(5e-4, 5e-2), sigma_v2=(5e-4, 5e-2), q2=10.0, r2=1e3)
    return generate_dataset(scenario, noise)


@pytest.fixture(scope="session")
def system5():
    return slam_system(5)


def fd_jacobian(fun, x, step=1e-6, wrap_rows=None):
    """Central finite-difference Jacobian, wrapping the given output rows."""
    from slamfilters.geometry import wrap_angle

    x = np.asarray(x, dtype=float)
    y0 = np.asarray(fun(x))
    jac = np.zeros((y0.shape[-1], x.shape[-1]))
    for j in range(x.shape[-1]):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        diff = np.asarray(fun(xp)) - np.asarray(fun(xm))
        if wrap_rows is not None and len(wrap_rows):
            diff[wrap_rows] = wrap_angle(diff[wrap_rows])
        jac[:, j] = diff / (2.0 * step)
    return jac


def random_slam_state(rng, num_landmarks=5, min_range=2.0):
    """A random state whose landmarks all stay at least min_range away."""
    while True:
        pose = np.concatenate([rng.uniform(-5, 5, 2), [rng.uniform(-np.pi, np.pi)]])
        landmarks = rng.uniform(-30, 30, (num_landmarks, 2))
        ranges = np.hypot(landmarks[:, 0] - pose[0], landmarks[:, 1] - pose[1])
        if np.all(ranges >= min_range):
            return np.concatenate([pose, landmarks.ravel()])
