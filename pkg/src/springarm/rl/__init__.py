from .core import (
    BandMap,
    RLConfig,
    RLState,
    Transition,
    build_state,
    compute_reward,
    relabel_goal,
    sample_goal,
    state_features,
)
from .buffer import ReplayBuffer, TransitionBatch
from .tqc import TQCAgent, TQCConfig, act, tqc_update
from .env import SensorSpaceEnv
from .train import ActorPolicy, train_multigoal

__all__ = [
    "BandMap", "RLConfig", "RLState", "Transition", "build_state",
    "compute_reward", "relabel_goal", "sample_goal", "state_features",
    "ReplayBuffer", "TransitionBatch", "TQCAgent", "TQCConfig", "act",
    "tqc_update", "SensorSpaceEnv", "ActorPolicy", "train_multigoal",
]
