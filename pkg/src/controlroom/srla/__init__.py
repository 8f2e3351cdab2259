"""Specialized reinforcement learning: TD3 with residual expert baselines."""

from .agent import (
    AgentRegistry,
    HistoryBuffer,
    SpecializationSpec,
    Td3Agent,
    Td3Config,
    assemble_state,
    reward,
    select_agent,
)
from .checkpoint import load_agent, save_agent, write_learning_curve
from .envs import PlantScenarioEnv, TankPressureEnv
from .replay import ReplayBuffer
from .train import TrainResult, discounted_returns, evaluate_tracking, make_spec_for_env, train

__all__ = [
    "AgentRegistry",
    "HistoryBuffer",
    "PlantScenarioEnv",
    "ReplayBuffer",
    "SpecializationSpec",
    "TankPressureEnv",
    "Td3Agent",
    "Td3Config",
    "TrainResult",
    "assemble_state",
    "discounted_returns",
    "evaluate_tracking",
    "load_agent",
    "make_spec_for_env",
    "reward",
    "save_agent",
    "select_agent",
    "train",
    "write_learning_curve",
]
