"""Learned VM selection (RL) trained with PPO and composed with PABFD."""

from .features import FEATURE_NAMES, encode_state, pool
from .network import PolicyParams, init_params, load_model, save_model
from .ppo import (Adam, PPOConfig, Trajectory, clipped_objective, compute_advantages,
                  ppo_ratio, ppo_update, reward, select_action)
from .train import TrainResult, curve_csv, rl_step, rollout, train

__all__ = [
    "FEATURE_NAMES", "encode_state", "pool", "PolicyParams", "init_params", "load_model",
    "save_model", "Adam", "PPOConfig", "Trajectory", "clipped_objective", "compute_advantages",
    "ppo_ratio", "ppo_update", "reward", "select_action", "TrainResult", "curve_csv", "rl_step",
    "rollout", "train",
]
