"""Swap-based team-selection MDP.

An episode starts from a uniformly random 11-of-22 team. Each action swaps one
selected player for one reserve; the episode ends when the selected team scores at
least ``alpha`` times the dream-team score or after ``max_steps`` swaps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from .domain import N_ACTIONS, N_FEATURES, N_PLAYERS, TEAM_SIZE, Round, SwapAction, TeamState, dream_team, team_score

OBS_DIM = N_PLAYERS * N_FEATURES + N_PLAYERS + 1
# guards the goal comparison against summation-order rounding
GOAL_TOL = 1e-9


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    alpha: float = 0.8
    max_steps: int = 30
    step_reward: float = -1.0
    goal_reward: float = 10.0

    def __post_init__(self):
        if not 0.7 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0.7, 1.0], got {self.alpha}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def encode_observation(state: TeamState, round_: Round, t: int, max_steps: int) -> np.ndarray:
    """Flattened features (canonical order), then the selection mask, then t / max_steps."""
    obs = np.empty(OBS_DIM)
    obs[: N_PLAYERS * N_FEATURES] = round_.features.ravel()
    obs[N_PLAYERS * N_FEATURES : -1] = state.mask()
    obs[-1] = t / max_steps
    return obs


def decode_mask(obs: np.ndarray) -> TeamState:
    return TeamState.from_mask(obs[N_PLAYERS * N_FEATURES : -1])


def slot_order_view(obs: np.ndarray) -> np.ndarray:
    """Observation with feature rows permuted into action-slot order.

    Rows 0..10 hold the selected players (ascending index) and rows 11..21 the
    reserved ones, so row ``k`` describes the player that slot ``k`` of an action
    refers to. Mask and time entries are unchanged. Accepts a single observation or
    a batch; no information is added or lost.
    """
    obs = np.asarray(obs, dtype=np.float64)
    batch = np.atleast_2d(obs)
    n_feat = N_PLAYERS * N_FEATURES
    mask = batch[:, n_feat:-1]
    # stable sort on "not selected" puts selected first, each group in ascending index
    order = np.argsort(mask < 0.5, axis=1, kind="stable")
    feats = batch[:, :n_feat].reshape(len(batch), N_PLAYERS, N_FEATURES)
    out = batch.copy()
    out[:, :n_feat] = np.take_along_axis(feats, order[:, :, None], axis=1).reshape(len(batch), n_feat)
    return out if obs.ndim == 2 else out[0]


def minimal_swaps(start: TeamState, goal_set) -> int:
    return TEAM_SIZE - len(set(start.selected) & set(goal_set))


def random_team(rng: np.random.Generator) -> TeamState:
    return TeamState(tuple(rng.choice(N_PLAYERS, size=TEAM_SIZE, replace=False)))


def action_players(mask: np.ndarray, action: int) -> tuple[int, int]:
    """(outgoing, incoming) canonical player indices for an action index under ``mask``."""
    sel = np.flatnonzero(mask > 0.5)
    res = np.flatnonzero(mask < 0.5)
    s, r = divmod(int(action), TEAM_SIZE)
    return int(sel[s]), int(res[r])


class SwapEnv:
    """Single-round environment; ``reset`` picks the round and start team.

    ``trace`` may be a writable text stream; one JSON object per step is appended.
    """

    def __init__(self, config: EnvConfig | None = None, trace: IO[str] | None = None):
        self.config = config or EnvConfig()
        self.trace = trace
        self.round: Round | None = None
        self.state: TeamState | None = None
        self.t = 0
        self.done = True
        self.episode = -1
        self.goal_threshold = float("nan")
        self.dream_score = float("nan")
        self.score = float("nan")
        self._mask = np.zeros(N_PLAYERS)

    def reset(self, round_: Round, rng_seed=None, start: TeamState | None = None) -> np.ndarray:
        """Start an episode on ``round_``. ``rng_seed`` may be an int or a Generator."""
        if start is None:
            rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
            start = random_team(rng)
        self.round = round_
        self.state = start
        self._mask = start.mask()
        self.t = 0
        self.done = False
        self.episode += 1
        self.dream_score = team_score(dream_team(round_), round_)
        self.goal_threshold = self.config.alpha * self.dream_score
        self.score = team_score(start, round_)
        return self.observation()

    def observation(self) -> np.ndarray:
        obs = np.empty(OBS_DIM)
        obs[: N_PLAYERS * N_FEATURES] = self.round.features.ravel()
        obs[N_PLAYERS * N_FEATURES : -1] = self._mask
        obs[-1] = self.t / self.config.max_steps
        return obs

    def is_goal(self, score: float) -> bool:
        return score >= self.goal_threshold - GOAL_TOL

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeFinished("episode finished; reset required")
        index = action.index if isinstance(action, SwapAction) else int(action)
        if not 0 <= index < N_ACTIONS:
            raise ValueError(f"action index must lie in 0..{N_ACTIONS - 1}, got {index}")
        out_p, in_p = action_players(self._mask, index)
        self._mask[out_p] = 0.0
        self._mask[in_p] = 1.0
        self.state = TeamState(tuple(np.flatnonzero(self._mask)))
        self.t += 1
        self.score = team_score(self.state, self.round)
        cfg = self.config
        if self.is_goal(self.score):
            reward, self.done = cfg.goal_reward, True
        else:
            reward, self.done = cfg.step_reward, self.t >= cfg.max_steps
        info = {
            "team_score": self.score,
            "dream_score": self.dream_score,
            "goal_threshold": self.goal_threshold,
            "swaps_so_far": self.t,
        }
        if self.trace is not None:
            sel, res = divmod(index, TEAM_SIZE)
            self.trace.write(
                json.dumps(
                    {
                        "episode": self.episode,
                        "t": self.t,
                        "action_sel": sel,
                        "action_res": res,
                        "reward": reward,
                        "team_score": self.score,
                        "done": self.done,
                    }
                )
                + "\n"
            )
        return StepResult(self.observation(), reward, self.done, info)


@dataclass
class EpisodeOutcome:
    best_state: TeamState
    best_score: float
    final_state: TeamState
    steps: int
    reached_goal: bool
    total_reward: float


def run_episode(choose, round_: Round, config: EnvConfig, seed) -> EpisodeOutcome:
    """Roll out ``choose(observation) -> action index`` from a seeded random start.

    Stops at the goal or the step cap and reports the best-scoring team visited,
    the start team included.
    """
    env = SwapEnv(config)
    obs = env.reset(round_, seed)
    best_state, best_score = env.state, env.score
    total = 0.0
    while not env.done:
        res = env.step(choose(obs))
        obs = res.observation
        total += res.reward
        if env.score > best_score:
            best_state, best_score = env.state, env.score
    return EpisodeOutcome(best_state, best_score, env.state, env.t, env.is_goal(env.score), total)
