"""Multi-vehicle flocking control: simulator, anchor-grid observations,
composite rewards, and a deterministic actor-critic training stack."""

__version__ = "0.1.0"

from .world import (
    ControlInput, ProximitySets, ScenarioConfig, VehiclePose, WorldState,
    build_proximity_sets, reset_episode, step_vehicle, step_world, wrap_angle,
)
from .observation import (
    AnchorGrid, Observation, ObservationGrids, encode_observation,
    radial_intensity, to_body_frame,
)
from .reward import (
    RewardBreakdown, RewardWeights, composite_reward, connectivity_term,
    inclusive_reward, obstacle_term, waypoint_term,
)
from .replay import Minibatch, ReplayBuffer, Transition
from .ddpg import (
    LearnerState, act, actor_update, critic_update, init_learner,
    load_learner, save_learner, soft_update, target_value,
)
from .trainer import (
    EpisodeRecord, EvalSummary, TrainConfig, TrainingDiverged,
    compute_return, run_evaluation, run_training,
)

__all__ = [name for name in dir() if not name.startswith("_")]
