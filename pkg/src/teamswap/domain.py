"""Core value types for the 22-player / 11-selected team problem."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

N_PLAYERS = 22
TEAM_SIZE = 11
N_FEATURES = 10
N_ACTIONS = TEAM_SIZE * TEAM_SIZE

PlayerId = str
RoundId = str


@dataclass(frozen=True)
class PlayerRoundRecord:
    player: PlayerId
    round_id: RoundId
    date: dt.date
    raw_points: float
    selection_pct: float

    def __post_init__(self):
        if not math.isfinite(self.raw_points):
            raise ValueError(f"raw_points must be finite, got {self.raw_points!r}")
        if not (0.0 <= self.selection_pct <= 1.0):
            raise ValueError(f"selection_pct must lie in [0, 1], got {self.selection_pct!r}")


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Round:
    """One match: 22 players in canonical (ascending id) order plus their targets and inputs.

    ``normalized_points`` are the per-match min-max scaled fantasy points used for all
    scoring; ``features`` is the (22, 10) observation block (see ``data.build_round``).
    ``raw_points`` and ``selection_pct`` are kept for the baselines and reporting.
    """

    round_id: RoundId
    date: dt.date
    players: tuple[PlayerId, ...]
    normalized_points: np.ndarray
    features: np.ndarray
    raw_points: np.ndarray | None = None
    selection_pct: np.ndarray | None = None

    def __post_init__(self):
        players = tuple(self.players)
        if len(players) != N_PLAYERS:
            raise ValueError(f"round {self.round_id}: expected {N_PLAYERS} players, got {len(players)}")
        if len(set(players)) != N_PLAYERS:
            raise ValueError(f"round {self.round_id}: duplicate players")
        if list(players) != sorted(players):
            raise ValueError(f"round {self.round_id}: players must be in ascending id order")
        object.__setattr__(self, "players", players)
        object.__setattr__(self, "normalized_points", _frozen_array(self.normalized_points, (N_PLAYERS,)))
        feats = _frozen_array(self.features, (N_PLAYERS, N_FEATURES))
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"round {self.round_id}: non-finite features")
        object.__setattr__(self, "features", feats)
        if self.raw_points is not None:
            object.__setattr__(self, "raw_points", _frozen_array(self.raw_points, (N_PLAYERS,)))
        if self.selection_pct is not None:
            object.__setattr__(self, "selection_pct", _frozen_array(self.selection_pct, (N_PLAYERS,)))


@dataclass(frozen=True)
class TeamState:
    """Partition of the 22 round positions into 11 selected and 11 reserved."""

    selected: tuple[int, ...]
    reserved: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        sel = tuple(sorted(int(i) for i in self.selected))
        if len(sel) != TEAM_SIZE or len(set(sel)) != TEAM_SIZE:
            raise ValueError(f"selected must hold {TEAM_SIZE} distinct indices, got {sel}")
        if sel[0] < 0 or sel[-1] >= N_PLAYERS:
            raise ValueError(f"selected indices must lie in 0..{N_PLAYERS - 1}")
        object.__setattr__(self, "selected", sel)
        chosen = set(sel)
        object.__setattr__(self, "reserved", tuple(i for i in range(N_PLAYERS) if i not in chosen))

    @classmethod
    def from_mask(cls, mask: Sequence) -> "TeamState":
        mask = np.asarray(mask)
        if mask.shape != (N_PLAYERS,):
            raise ValueError(f"mask must have length {N_PLAYERS}")
        return cls(tuple(np.flatnonzero(mask > 0.5)))

    def mask(self) -> np.ndarray:
        m = np.zeros(N_PLAYERS)
        m[list(self.selected)] = 1.0
        return m

    def swap(self, action: "SwapAction") -> "TeamState":
        out_player = self.selected[action.sel_slot]
        in_player = self.reserved[action.res_slot]
        return TeamState(tuple(i for i in self.selected if i != out_player) + (in_player,))


@dataclass(frozen=True)
class SwapAction:
    sel_slot: int
    res_slot: int

    def __post_init__(self):
        if not (0 <= self.sel_slot < TEAM_SIZE and 0 <= self.res_slot < TEAM_SIZE):
            raise ValueError(f"slots must lie in 0..{TEAM_SIZE - 1}, got ({self.sel_slot}, {self.res_slot})")

    @property
    def index(self) -> int:
        return self.sel_slot * TEAM_SIZE + self.res_slot

    @classmethod
    def from_index(cls, index: int) -> "SwapAction":
        index = int(index)
        if not 0 <= index < N_ACTIONS:
            raise ValueError(f"action index must lie in 0..{N_ACTIONS - 1}, got {index}")
        return cls(*divmod(index, TEAM_SIZE))


def team_score(state: TeamState, round_: Round) -> float:
    return float(round_.normalized_points[list(state.selected)].sum())


def top_k(values: Iterable[float], k: int = TEAM_SIZE) -> tuple[int, ...]:
    """Indices of the ``k`` largest values; ties go to the lower index."""
    values = np.asarray(list(values), dtype=np.float64)
    order = np.lexsort((np.arange(values.size), -values))
    return tuple(sorted(int(i) for i in order[:k]))


def dream_team(round_: Round) -> TeamState:
    return TeamState(top_k(round_.normalized_points))
