"""Gaussian MLP policies, behavior cloning, PPO and automatic domain randomization."""

from .adr import AdrState, adr_update
from .checkpoint import load_checkpoint, read_curve, save_checkpoint, write_curve
from .networks import (MLP, GaussianPolicy, ValueNet, backprop_check, gaussian_log_prob, policy_forward,
                       sample_action)
from .training import (Adam, BCResult, PPOConfig, PPOResult, RolloutBuffer, TrainingAborted, bc_train,
                       discounted_return, episode_seed, episode_success, evaluate_policy, gae,
                       perturbed_demo_pairs, ppo_finetune, ppo_loss_grads, run_episode)

__all__ = [
    "MLP", "Adam", "AdrState", "BCResult", "GaussianPolicy", "PPOConfig", "PPOResult", "RolloutBuffer",
    "TrainingAborted", "ValueNet", "adr_update", "backprop_check", "bc_train", "discounted_return",
    "episode_seed", "episode_success", "evaluate_policy", "gae", "gaussian_log_prob", "load_checkpoint",
    "perturbed_demo_pairs", "policy_forward", "ppo_finetune", "ppo_loss_grads", "read_curve", "run_episode", "sample_action",
    "save_checkpoint", "write_curve",
]
