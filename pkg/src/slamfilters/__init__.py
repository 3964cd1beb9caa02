"""Range-bearing landmark SLAM estimators and benchmark harness."""

from .datasets import (
    Dataset,
    NoiseSampling,
    ScenarioConfig,
    Trajectory,
    generate_dataset,
    inject_association_errors,
    load_dataset,
    save_dataset,
)
from .ekf import (
    FilterModel,
    GaussianBelief,
    SystemModel,
    initial_belief,
    initial_mean,
    kalman_gain,
    mismatched_filter_model,
    predict,
    run_filter,
    slam_filter_model,
    slam_system,
    update,
)
from .geometry import (
    MotionInput,
    Pose,
    StateVector,
    inverse_observation,
    jacobian_f,
    jacobian_h,
    measure,
    motion_step,
    wrap_angle,
)
from .metrics import PERFECT, mse_db
from .noise import NoiseConfig, build_Q, build_R
from .rollout import TrajectoryArrays

__version__ = "0.1.0"
