"""Safe continual reinforcement learning: CPO, PPO+EWC and Safe EWC on non-stationary CMDPs."""

__version__ = "0.1.0"
