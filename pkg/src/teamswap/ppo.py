"""PPO with a shared-trunk actor-critic, GAE and a clipped surrogate objective."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .domain import N_ACTIONS, Round, TeamState
from .env import OBS_DIM, EnvConfig, SwapEnv, run_episode, slot_order_view
from .nn import Adam, DenseNet, clip_by_global_norm, load_checkpoint, log_softmax, save_checkpoint, softmax

log = logging.getLogger(__name__)

TRUNK_DIMS = (OBS_DIM, 256, 512, 1024)
POLICY_HEAD_DIMS = (1024, 512, 256, N_ACTIONS)
VALUE_HEAD_DIMS = (1024, 1)

LOG_FIELDS = ["update", "timesteps", "episodes", "ep_reward_mean", "policy_loss", "value_loss", "entropy", "clip_fraction"]


@dataclass(frozen=True)
class PpoConfig:
    total_timesteps: int = 200_000
    learning_rate: float = 1e-4
    gamma: float = 0.99
    batch_size: int = 128
    n_envs: int = 8
    n_epochs: int = 10
    clip_range: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    gae_lambda: float = 0.95
    rollout_length: int = 256
    max_grad_norm: float = 0.5
    activation: str = "relu"
    normalize_rewards: bool = True
    policy_init_gain: float = 0.01
    slot_order: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.clip_range <= 0:
            raise ValueError("clip_range must be > 0")
        if self.n_envs < 1 or self.rollout_length < 1 or self.n_epochs < 1:
            raise ValueError("n_envs, rollout_length and n_epochs must be >= 1")
        if (self.n_envs * self.rollout_length) % self.batch_size:
            raise ValueError("batch_size must divide n_envs * rollout_length")
        if self.total_timesteps < 1 or self.learning_rate <= 0:
            raise ValueError("total_timesteps and learning_rate must be positive")
        if self.policy_init_gain <= 0:
            raise ValueError("policy_init_gain must be > 0")


def actor_critic_spec(trunk=TRUNK_DIMS, policy=POLICY_HEAD_DIMS, value=VALUE_HEAD_DIMS, activation="relu") -> dict:
    return {
        "trunk": {"layer_dims": list(trunk), "activation": activation, "output_activation": activation},
        "policy": {"layer_dims": list(policy), "activation": activation, "output_activation": "softmax"},
        "value": {"layer_dims": list(value), "activation": activation, "output_activation": "linear"},
    }


class ActorCritic:
    """Shared trunk feeding a softmax policy head and a linear value head."""

    def __init__(self, spec: dict | None = None, rng=None, policy_init_gain: float = 1.0, slot_order: bool = False):
        self.slot_order = slot_order
        spec = spec or actor_critic_spec()
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.trunk = DenseNet(rng=rng, **spec["trunk"])
        self.policy = DenseNet(rng=rng, **spec["policy"])
        self.value = DenseNet(rng=rng, **spec["value"])
        # a small last layer starts the policy close to uniform
        self.policy.weights[-1] *= policy_init_gain
        if self.trunk.layer_dims[-1] != self.policy.layer_dims[0] or self.trunk.layer_dims[-1] != self.value.layer_dims[0]:
            raise ValueError("trunk output width must match both head inputs")

    @property
    def nets(self) -> list[DenseNet]:
        return [self.trunk, self.policy, self.value]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for n in self.nets for p in n.params]

    def spec(self) -> dict:
        return {"trunk": self.trunk.describe(), "policy": self.policy.describe(), "value": self.value.describe()}

    def forward(self, obs):
        """Returns (logits, values, caches); ``obs`` is a batch."""
        if self.slot_order:
            obs = slot_order_view(obs)
        h, c_t = self.trunk.forward(obs)
        _, c_p = self.policy.forward(h)
        v, c_v = self.value.forward(h)
        return c_p.logits, v[:, 0], (c_t, c_p, c_v)

    def probs(self, obs) -> np.ndarray:
        return softmax(self.forward(np.atleast_2d(obs))[0])

    def values(self, obs) -> np.ndarray:
        return self.forward(np.atleast_2d(obs))[1]

    def backward(self, caches, dlogits, dvalues) -> list[np.ndarray]:
        c_t, c_p, c_v = caches
        g_p, dh_p = self.policy.backward(c_p, dlogits, wrt_logits=True, input_grad=True)
        g_v, dh_v = self.value.backward(c_v, dvalues[:, None], input_grad=True)
        g_t = self.trunk.backward(c_t, dh_p + dh_v)
        return g_t + g_p + g_v

    def copy(self) -> "ActorCritic":
        other = ActorCritic.__new__(ActorCritic)
        other.trunk, other.policy, other.value = self.trunk.copy(), self.policy.copy(), self.value.copy()
        other.slot_order = self.slot_order
        return other


@dataclass
class RolloutBuffer:
    """Arrays shaped (rollout_length, n_envs, ...); ``dones[t]`` marks that step t ended its episode."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return self.actions.size


class ReturnScaler:
    """Running standard deviation of per-env discounted returns, used to rescale rewards for learning."""

    def __init__(self, n_envs: int, gamma: float):
        self.gamma = gamma
        self.running = np.zeros(n_envs)
        self.count, self.mean, self.m2 = 0, 0.0, 0.0

    @property
    def std(self) -> float:
        return float(np.sqrt(self.m2 / self.count)) if self.count > 1 else 1.0

    def update(self, rewards: np.ndarray, dones: np.ndarray) -> None:
        """``rewards``/``dones`` shaped (T, n_envs), in time order."""
        for r, d in zip(rewards, dones):
            self.running = self.running * self.gamma + r
            for x in self.running:
                self.count += 1
                delta = x - self.mean
                self.mean += delta / self.count
                self.m2 += delta * (x - self.mean)
            self.running = self.running * (1.0 - d)

    def scale(self, rewards: np.ndarray) -> np.ndarray:
        return rewards / (self.std + 1e-8)

    def state(self) -> dict:
        return {"running": self.running.tolist(), "count": self.count, "mean": self.mean, "m2": self.m2}

    def load(self, state: dict) -> None:
        self.running = np.array(state["running"], dtype=np.float64)
        self.count, self.mean, self.m2 = state["count"], state["mean"], state["m2"]


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates, bootstrapping from ``last_values``; fills the buffer."""
    T = buffer.rewards.shape[0]
    adv = np.zeros_like(buffer.rewards)
    running = np.zeros_like(buffer.last_values)
    for t in range(T - 1, -1, -1):
        next_value = buffer.last_values if t == T - 1 else buffer.values[t + 1]
        live = 1.0 - buffer.dones[t]
        delta = buffer.rewards[t] + gamma * next_value * live - buffer.values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    buffer.advantages = adv
    buffer.returns = adv + buffer.values
    return buffer.advantages, buffer.returns


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=-1), probs.shape[-1] - 1)


@dataclass
class EpisodeStats:
    rewards: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    goals: list = field(default_factory=list)


class VecSwapEnv:
    """``n`` environments stepped in lockstep; finished episodes restart on a fresh random round."""

    def __init__(self, rounds: Sequence[Round], n: int, env_config: EnvConfig, seed):
        if not rounds:
            raise ValueError("need at least one round")
        self.rounds = list(rounds)
        self.envs = [SwapEnv(env_config) for _ in range(n)]
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
        self.ep_reward = np.zeros(n)
        self.stats = EpisodeStats()
        self.obs = np.stack([self._reset(i) for i in range(n)])

    def _reset(self, i: int) -> np.ndarray:
        rng = self.rngs[i]
        round_ = self.rounds[int(rng.integers(len(self.rounds)))]
        return self.envs[i].reset(round_, rng)

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = len(self.envs)
        rewards, dones = np.zeros(n), np.zeros(n)
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            res = env.step(int(a))
            rewards[i], dones[i] = res.reward, res.done
            self.ep_reward[i] += res.reward
            if res.done:
                self.stats.rewards.append(float(self.ep_reward[i]))
                self.stats.lengths.append(env.t)
                self.stats.goals.append(bool(env.is_goal(env.score)))
                self.ep_reward[i] = 0.0
                self.obs[i] = self._reset(i)
            else:
                self.obs[i] = res.observation
        return self.obs.copy(), rewards, dones


def collect_rollouts(venv: VecSwapEnv, model: ActorCritic, rollout_length: int, rng: np.random.Generator) -> RolloutBuffer:
    n = len(venv.envs)
    obs_buf = np.zeros((rollout_length, n, OBS_DIM))
    act_buf = np.zeros((rollout_length, n), dtype=np.int64)
    logp_buf = np.zeros((rollout_length, n))
    rew_buf = np.zeros((rollout_length, n))
    done_buf = np.zeros((rollout_length, n))
    val_buf = np.zeros((rollout_length, n))
    obs = venv.obs.copy()
    for t in range(rollout_length):
        logits, values, _ = model.forward(obs)
        logp_all = log_softmax(logits)
        actions = sample_categorical(np.exp(logp_all), rng)
        obs_buf[t] = obs
        act_buf[t] = actions
        logp_buf[t] = logp_all[np.arange(n), actions]
        val_buf[t] = values
        obs, rew_buf[t], done_buf[t] = venv.step(actions)
    last_values = model.forward(obs)[1]
    return RolloutBuffer(obs_buf, act_buf, logp_buf, rew_buf, done_buf, val_buf, last_values)


def clipped_surrogate(ratio, advantages, clip_range: float) -> np.ndarray:
    """Per-sample min(r A, clip(r, 1 - eps, 1 + eps) A)."""
    ratio, advantages = np.asarray(ratio, dtype=np.float64), np.asarray(advantages, dtype=np.float64)
    return np.minimum(ratio * advantages, np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantages)


def ppo_loss(model: ActorCritic, obs, actions, old_log_probs, advantages, returns, cfg: PpoConfig):
    """Total loss, gradients and stats for one minibatch.

    loss = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) + vf_coef * mean((V - R)^2) - ent_coef * mean(H)
    """
    B = len(actions)
    logits, values, caches = model.forward(obs)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    rows = np.arange(B)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range) * advantages
    policy_loss = -np.mean(clipped_surrogate(ratio, advantages, cfg.clip_range))
    entropy_each = -(p * logp_all).sum(axis=1)
    entropy = float(entropy_each.mean())
    value_loss = float(np.mean((values - returns) ** 2))
    total = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy
    if not np.isfinite(total):
        raise FloatingPointError(
            f"non-finite PPO loss: policy={policy_loss}, value={value_loss}, entropy={entropy}, max ratio={ratio.max()}"
        )

    # the clipped branch has zero slope wherever it is the active minimum
    unclipped = surr1 <= surr2
    d_logp = -(advantages * ratio * unclipped) / B
    dlogits = -p * d_logp[:, None]
    dlogits[rows, actions] += d_logp
    # dH/dz_j = -p_j (log p_j + H)
    dlogits += cfg.ent_coef / B * p * (logp_all + entropy_each[:, None])
    dvalues = cfg.vf_coef * 2.0 * (values - returns) / B
    grads = model.backward(caches, dlogits, dvalues)
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_range)),
    }
    return float(total), grads, stats


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(buffer: RolloutBuffer, model: ActorCritic, optimizer: Adam, cfg: PpoConfig, rng) -> dict:
    obs = buffer.observations.reshape(-1, OBS_DIM)
    actions = buffer.actions.reshape(-1)
    old_logp = buffer.log_probs.reshape(-1)
    adv = normalize_advantages(buffer.advantages.reshape(-1))
    returns = buffer.returns.reshape(-1)
    n = len(actions)
    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0}
    count = 0
    for _ in range(cfg.n_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads, stats = ppo_loss(model, obs[idx], actions[idx], old_logp[idx], adv[idx], returns[idx], cfg)
            grads, _ = clip_by_global_norm(grads, cfg.max_grad_norm)
            optimizer.step(grads)
            for k in totals:
                totals[k] += stats[k]
            count += 1
    return {k: v / count for k, v in totals.items()}


@dataclass
class PpoAgent:
    model: ActorCritic
    optimizer: Adam
    config: PpoConfig
    env_config: EnvConfig
    timesteps: int = 0
    updates: int = 0
    episodes: int = 0
    scaler_state: dict | None = None

    @classmethod
    def create(cls, cfg: PpoConfig, env_config: EnvConfig | None = None) -> "PpoAgent":
        model = ActorCritic(actor_critic_spec(activation=cfg.activation), np.random.default_rng([cfg.seed, 1]), cfg.policy_init_gain, cfg.slot_order)
        return cls(model, Adam(model.nets, cfg.learning_rate), cfg, env_config or EnvConfig())

    def save(self, path) -> None:
        meta = {
            "agent": "ppo",
            "config": asdict(self.config),
            "env_config": asdict(self.env_config),
            "timesteps": self.timesteps,
            "updates": self.updates,
            "episodes": self.episodes,
            "scaler_state": self.scaler_state,
        }
        save_checkpoint(path, dict(zip(("trunk", "policy", "value"), self.model.nets)), self.optimizer.state, meta)

    @classmethod
    def load(cls, path) -> "PpoAgent":
        nets, adam_state, meta = load_checkpoint(path)
        if meta.get("agent") != "ppo":
            raise ValueError(f"{path} is not a PPO checkpoint")
        model = ActorCritic.__new__(ActorCritic)
        model.trunk, model.policy, model.value = nets["trunk"], nets["policy"], nets["value"]
        cfg = PpoConfig(**meta["config"])
        model.slot_order = cfg.slot_order
        opt = Adam(model.nets, cfg.learning_rate)
        if adam_state is not None:
            opt.state = adam_state
        return cls(model, opt, cfg, EnvConfig(**meta["env_config"]), meta["timesteps"], meta["updates"], meta["episodes"], meta["scaler_state"])

    def choose(self, obs, mode: str = "argmax", rng=None) -> int:
        p = self.model.probs(obs)[0]
        if mode == "argmax":
            return int(np.argmax(p))
        if mode == "sample":
            return int(sample_categorical(p[None, :], rng)[0])
        raise ValueError(f"mode must be 'argmax' or 'sample', got {mode!r}")


def train(rounds: Sequence[Round], cfg: PpoConfig, env_config: EnvConfig | None = None, agent: PpoAgent | None = None, log_rows=None):
    """Alternate rollouts and clipped-surrogate updates until ``cfg.total_timesteps``.

    Passing a loaded ``agent`` resumes its step counter. Returns ``(agent, rows, episodes)``
    where ``rows`` holds one dict per update (``LOG_FIELDS``) and ``episodes`` the
    per-episode reward, length and goal flag.
    """
    if not rounds:
        raise ValueError("need at least one training round")
    agent = agent or PpoAgent.create(cfg, env_config)
    env_config = agent.env_config
    rng = np.random.default_rng([cfg.seed, 2, agent.updates])
    venv = VecSwapEnv(rounds, cfg.n_envs, env_config, [cfg.seed, 3, agent.updates])
    scaler = ReturnScaler(cfg.n_envs, cfg.gamma)
    if agent.scaler_state is not None:
        scaler.load(agent.scaler_state)
    rows = [] if log_rows is None else log_rows
    per_update = cfg.n_envs * cfg.rollout_length
    while agent.timesteps < cfg.total_timesteps:
        seen = len(venv.stats.rewards)
        buffer = collect_rollouts(venv, agent.model, cfg.rollout_length, rng)
        if cfg.normalize_rewards:
            scaler.update(buffer.rewards, buffer.dones)
            buffer.rewards = scaler.scale(buffer.rewards)
            agent.scaler_state = scaler.state()
        compute_gae(buffer, cfg.gamma, cfg.gae_lambda)
        stats = ppo_update(buffer, agent.model, agent.optimizer, cfg, rng)
        agent.timesteps += per_update
        agent.updates += 1
        new = venv.stats.rewards[seen:]
        agent.episodes += len(new)
        row = {
            "update": agent.updates,
            "timesteps": agent.timesteps,
            "episodes": agent.episodes,
            "ep_reward_mean": float(np.mean(new)) if new else float("nan"),
            **stats,
        }
        rows.append(row)
        log.info("ppo update %d: t=%d ep_reward=%.2f entropy=%.3f", row["update"], row["timesteps"], row["ep_reward_mean"], row["entropy"])
    return agent, rows, venv.stats


def act(agent: PpoAgent, round_: Round, max_steps: int | None = None, mode: str = "argmax", seed=0, env_config: EnvConfig | None = None) -> TeamState:
    """Best team visited by a policy rollout from a seeded random start."""
    return act_episode(agent, round_, max_steps, mode, seed, env_config).best_state


def act_episode(agent: PpoAgent, round_: Round, max_steps=None, mode="argmax", seed=0, env_config=None):
    env_config = env_config or agent.env_config
    if max_steps is not None:
        env_config = EnvConfig(env_config.alpha, max_steps, env_config.step_reward, env_config.goal_reward)
    rng = np.random.default_rng([int(np.random.SeedSequence(seed).generate_state(1)[0]), 7])
    return run_episode(lambda o: agent.choose(o, mode, rng), round_, env_config, seed)
