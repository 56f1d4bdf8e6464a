"""Swap-based fantasy team selection with DQN/PPO agents and baselines."""

__version__ = "0.1.0"
