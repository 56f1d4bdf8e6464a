"""DQN: replay buffer, hard-copied target network, linear epsilon schedule."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .domain import N_ACTIONS, Round, TeamState
from .env import OBS_DIM, EnvConfig, SwapEnv, run_episode, slot_order_view
from .nn import Adam, DenseNet, clip_by_global_norm, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

Q_NETWORK_DIMS = (OBS_DIM, 256, 256, N_ACTIONS)
LOG_FIELDS = ["episode", "steps", "cumulative_reward", "epsilon", "loss_mean"]


@dataclass(frozen=True)
class DqnConfig:
    total_timesteps: int = 200_000
    learning_rate: float = 1e-4
    gamma: float = 0.99
    batch_size: int = 128
    buffer_size: int = 10_000
    target_update_every: int = 5_000
    exploration_fraction: float = 0.1
    initial_epsilon: float = 1.0
    final_epsilon: float = 0.02
    max_grad_norm: float = 10.0
    slot_order: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("total_timesteps", "learning_rate", "batch_size", "buffer_size", "target_update_every", "max_grad_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.exploration_fraction <= 1:
            raise ValueError("exploration_fraction must lie in (0, 1]")
        for name in ("initial_epsilon", "final_epsilon"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")


def q_network_spec() -> dict:
    return {"layer_dims": list(Q_NETWORK_DIMS), "activation": "relu", "output_activation": "linear"}


def epsilon_at(step: int, cfg: DqnConfig) -> float:
    horizon = cfg.exploration_fraction * cfg.total_timesteps
    frac = min(step / horizon, 1.0)
    return cfg.initial_epsilon + frac * (cfg.final_epsilon - cfg.initial_epsilon)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int = 10_000, obs_dim: int = OBS_DIM):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.pos = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action index must lie in 0..{N_ACTIONS - 1}")
        i = self.pos
        self.obs[i], self.actions[i], self.rewards[i] = obs, action, reward
        self.next_obs[i], self.dones[i] = next_obs, float(done)
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx])


def td_targets(batch: Batch, target: DenseNet, gamma: float) -> np.ndarray:
    """y = r for terminal transitions, else r + gamma * max_a' Q_target(s', a')."""
    next_q = target(batch.next_obs).max(axis=1)
    return batch.rewards + gamma * (1.0 - batch.dones) * next_q


def td_loss(batch: Batch, online: DenseNet, target: DenseNet, gamma: float):
    """Mean squared TD error and its gradient with respect to the online network only."""
    y = td_targets(batch, target, gamma)
    q, cache = online.forward(batch.obs)
    rows = np.arange(len(batch))
    err = q[rows, batch.actions] - y
    loss = float(np.mean(err**2))
    g = np.zeros_like(q)
    g[rows, batch.actions] = 2.0 * err / len(batch)
    return loss, online.backward(cache, g)


@dataclass
class DqnAgent:
    online: DenseNet
    target: DenseNet
    optimizer: Adam
    config: DqnConfig
    env_config: EnvConfig
    timesteps: int = 0
    episodes: int = 0
    target_syncs: list = field(default_factory=list)

    @classmethod
    def create(cls, cfg: DqnConfig, env_config: EnvConfig | None = None, spec: dict | None = None) -> "DqnAgent":
        online = DenseNet(rng=np.random.default_rng([cfg.seed, 11]), **(spec or q_network_spec()))
        return cls(online, online.copy(), Adam([online], cfg.learning_rate), cfg, env_config or EnvConfig())

    def net_input(self, obs) -> np.ndarray:
        return slot_order_view(obs) if self.config.slot_order else obs

    def q_values(self, obs) -> np.ndarray:
        return self.online(self.net_input(obs))

    def choose(self, obs) -> int:
        return int(np.argmax(self.q_values(obs)))

    def save(self, path) -> None:
        meta = {
            "agent": "dqn",
            "config": asdict(self.config),
            "env_config": asdict(self.env_config),
            "timesteps": self.timesteps,
            "episodes": self.episodes,
        }
        save_checkpoint(path, {"online": self.online, "target": self.target}, self.optimizer.state, meta)

    @classmethod
    def load(cls, path) -> "DqnAgent":
        nets, adam_state, meta = load_checkpoint(path)
        if meta.get("agent") != "dqn":
            raise ValueError(f"{path} is not a DQN checkpoint")
        cfg = DqnConfig(**meta["config"])
        opt = Adam([nets["online"]], cfg.learning_rate)
        if adam_state is not None:
            opt.state = adam_state
        return cls(nets["online"], nets["target"], opt, cfg, EnvConfig(**meta["env_config"]), meta["timesteps"], meta["episodes"])


@dataclass
class DqnStats:
    rewards: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    goals: list = field(default_factory=list)
    random_actions: int = 0
    updates: int = 0


def train(rounds: Sequence[Round], cfg: DqnConfig, env_config: EnvConfig | None = None, agent: DqnAgent | None = None):
    """Epsilon-greedy Q-learning on uniformly sampled training rounds.

    Gradient steps start once the buffer holds ``batch_size`` transitions and happen
    every environment step; the target network is overwritten with the online one
    whenever the global step count reaches a multiple of ``target_update_every``.
    Returns ``(agent, rows, stats)`` with one ``LOG_FIELDS`` row per finished episode.
    """
    if not rounds:
        raise ValueError("need at least one training round")
    agent = agent or DqnAgent.create(cfg, env_config)
    rounds = list(rounds)
    rng = np.random.default_rng([cfg.seed, 12, agent.timesteps])
    env_rng = np.random.default_rng([cfg.seed, 13, agent.timesteps])
    buffer = ReplayBuffer(cfg.buffer_size)
    env = SwapEnv(agent.env_config)
    # the buffer holds network inputs, so the slot view is computed once per observation
    x = agent.net_input(env.reset(rounds[int(env_rng.integers(len(rounds)))], env_rng))
    rows, stats = [], DqnStats()
    ep_reward, ep_losses = 0.0, []
    while agent.timesteps < cfg.total_timesteps:
        eps = epsilon_at(agent.timesteps, cfg)
        if rng.random() < eps:
            action = int(rng.integers(N_ACTIONS))
            stats.random_actions += 1
        else:
            action = int(np.argmax(agent.online(x)))
        res = env.step(action)
        next_x = agent.net_input(res.observation)
        buffer.add(x, action, res.reward, next_x, res.done)
        ep_reward += res.reward
        x = next_x
        agent.timesteps += 1

        if len(buffer) >= cfg.batch_size:
            batch = buffer.sample(cfg.batch_size, rng)
            loss, grads = td_loss(batch, agent.online, agent.target, cfg.gamma)
            grads, _ = clip_by_global_norm(grads, cfg.max_grad_norm)
            agent.optimizer.step(grads)
            ep_losses.append(loss)
            stats.updates += 1
        if agent.timesteps % cfg.target_update_every == 0:
            agent.target.load_state_from(agent.online)
            agent.target_syncs.append(agent.timesteps)

        if res.done:
            agent.episodes += 1
            stats.rewards.append(ep_reward)
            stats.lengths.append(env.t)
            stats.goals.append(bool(env.is_goal(env.score)))
            rows.append(
                {
                    "episode": agent.episodes,
                    "steps": agent.timesteps,
                    "cumulative_reward": ep_reward,
                    "epsilon": eps,
                    "loss_mean": float(np.mean(ep_losses)) if ep_losses else float("nan"),
                }
            )
            ep_reward, ep_losses = 0.0, []
            x = agent.net_input(env.reset(rounds[int(env_rng.integers(len(rounds)))], env_rng))
            if agent.episodes % 500 == 0:
                log.info("dqn episode %d: t=%d eps=%.3f reward(last500)=%.2f", agent.episodes, agent.timesteps, eps, np.mean(stats.rewards[-500:]))
    return agent, rows, stats


def act_greedy(agent: DqnAgent, round_: Round, max_steps: int | None = None, seed=0, env_config: EnvConfig | None = None) -> TeamState:
    """Best team visited by an argmax-Q rollout from a seeded random start."""
    return act_episode(agent, round_, max_steps, seed, env_config).best_state


def act_episode(agent: DqnAgent, round_: Round, max_steps=None, seed=0, env_config=None, epsilon: float = 0.0):
    """Rollout with argmax-Q actions, replaced by a uniform action with probability ``epsilon``."""
    env_config = env_config or agent.env_config
    if max_steps is not None:
        env_config = EnvConfig(env_config.alpha, max_steps, env_config.step_reward, env_config.goal_reward)
    if epsilon <= 0:
        return run_episode(agent.choose, round_, env_config, seed)
    rng = np.random.default_rng([int(np.random.SeedSequence(seed).generate_state(1)[0]), 17])

    def policy(obs):
        if rng.random() < epsilon:
            return int(rng.integers(N_ACTIONS))
        return agent.choose(obs)

    return run_episode(policy, round_, env_config, seed)
