"""Player history: synthetic generation, CSV I/O, trailing-window features, temporal folds."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import N_FEATURES, N_PLAYERS, TEAM_SIZE, PlayerRoundRecord, Round, top_k

WINDOW_DAYS = 90
SHORT_WINDOW_DAYS = 30
EW_HALF_LIFE_DAYS = 30.0
BASE_POINTS = 30.0
SELECTION_TEMPERATURE = 10.0
SELECTION_LOOKBACK = 3
START_DATE = dt.date(2021, 1, 1)

HISTORY_HEADER = ["player_id", "round_id", "date", "raw_points", "selection_pct"]
MANIFEST_HEADER = ["round_id", "date"] + [f"player_{i}" for i in range(1, N_PLAYERS + 1)]

FEATURE_NAMES = (
    "mean_90d",
    "mean_30d",
    "std_90d",
    "count_90d",
    "last_points",
    "ew_mean",
    "max_90d",
    "min_90d",
    "dream_rate",
    "days_since_last",
)


class HistoryFormatError(ValueError):
    """A history or manifest file violates its schema."""


@dataclass(frozen=True)
class GeneratorConfig:
    n_players: int = 88
    n_rounds: int = 300
    seed: int = 0
    skill_spread: float = 10.0
    form_persistence: float = 0.7
    noise_scale: float = 12.0

    def __post_init__(self):
        if self.n_players < 2 * N_PLAYERS:
            raise ValueError(f"n_players must be >= {2 * N_PLAYERS} to field two squads with rotation, got {self.n_players}")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not self.skill_spread > 0:
            raise ValueError("skill_spread must be > 0")
        if not 0 <= self.form_persistence < 1:
            raise ValueError("form_persistence must lie in [0, 1)")
        if not self.noise_scale >= 0:
            # zero is allowed for the degenerate constant-points configuration
            raise ValueError("noise_scale must be >= 0")


@dataclass
class _PlayerSeries:
    ordinals: np.ndarray
    points: np.ndarray
    in_dream: np.ndarray


@dataclass
class HistoryStore:
    """Date-sorted player-round records with per-player lookup tables.

    ``latent_skill`` is only populated by the synthetic generator and does not take
    part in equality.
    """

    records: list[PlayerRoundRecord]
    latent_skill: dict[str, float] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: (r.date, r.round_id, r.player))
        seen = set()
        round_dates: dict[str, dt.date] = {}
        for rec in self.records:
            key = (rec.player, rec.round_id)
            if key in seen:
                raise HistoryFormatError(f"duplicate record for player {rec.player!r} in round {rec.round_id!r}")
            seen.add(key)
            if round_dates.setdefault(rec.round_id, rec.date) != rec.date:
                raise HistoryFormatError(f"round {rec.round_id!r} has records on more than one date")
        self._series: dict[str, _PlayerSeries] | None = None
        self._by_round: dict[str, list[PlayerRoundRecord]] | None = None

    def __len__(self):
        return len(self.records)

    def rounds(self) -> list[tuple[str, dt.date, tuple[str, ...]]]:
        """(round_id, date, sorted players) for every round, in date order."""
        members: dict[str, list[str]] = {}
        dates: dict[str, dt.date] = {}
        for rec in self.records:
            members.setdefault(rec.round_id, []).append(rec.player)
            dates[rec.round_id] = rec.date
        out = [(rid, dates[rid], tuple(sorted(ps))) for rid, ps in members.items()]
        out.sort(key=lambda x: (x[1], x[0]))
        return out

    def round_records(self, round_id: str) -> list[PlayerRoundRecord]:
        if self._by_round is None:
            self._by_round = {}
            for rec in self.records:
                self._by_round.setdefault(rec.round_id, []).append(rec)
        return sorted(self._by_round.get(round_id, []), key=lambda r: r.player)

    def series(self) -> dict[str, _PlayerSeries]:
        if self._series is None:
            self._series = self._build_series()
        return self._series

    def _build_series(self) -> dict[str, _PlayerSeries]:
        by_round: dict[str, list[PlayerRoundRecord]] = {}
        for rec in self.records:
            by_round.setdefault(rec.round_id, []).append(rec)
        dream: set[tuple[str, str]] = set()
        for rid, recs in by_round.items():
            recs = sorted(recs, key=lambda r: r.player)
            for i in top_k([r.raw_points for r in recs], min(TEAM_SIZE, len(recs))):
                dream.add((recs[i].player, rid))
        cols: dict[str, tuple[list, list, list]] = {}
        for rec in self.records:
            o, p, d = cols.setdefault(rec.player, ([], [], []))
            o.append(rec.date.toordinal())
            p.append(rec.raw_points)
            d.append((rec.player, rec.round_id) in dream)
        return {
            pid: _PlayerSeries(np.array(o, dtype=np.int64), np.array(p, dtype=np.float64), np.array(d, dtype=bool))
            for pid, (o, p, d) in cols.items()
        }


def generate_history(cfg: GeneratorConfig) -> HistoryStore:
    """Simulate a league: latent skill plus AR(1) form plus match noise per appearance.

    Players are split into squads; each round two squads meet and each fields 11 of
    its members.  Selection percentages are a 50/50 mix of uniform and a softmax over
    the players' recent (last few appearances) mean points, computed before the round.
    """
    rng = np.random.default_rng(cfg.seed)
    n_squads = max(2, cfg.n_players // 15)
    squads = [list(range(s, cfg.n_players, n_squads)) for s in range(n_squads)]
    ids = [f"P{i:04d}" for i in range(cfg.n_players)]
    skill = BASE_POINTS + cfg.skill_spread * rng.standard_normal(cfg.n_players)
    form = np.zeros(cfg.n_players)
    recent: list[list[float]] = [[] for _ in range(cfg.n_players)]

    records = []
    date = START_DATE
    for r in range(cfg.n_rounds):
        if r:
            date = date + dt.timedelta(days=int(rng.integers(1, 4)))
        home, away = rng.choice(n_squads, size=2, replace=False)
        lineup = []
        for s in (home, away):
            lineup.extend(int(p) for p in rng.choice(squads[s], size=TEAM_SIZE, replace=False))
        lineup.sort()
        lineup_arr = np.array(lineup)

        trailing = np.array([np.mean(recent[p][-SELECTION_LOOKBACK:]) if recent[p] else BASE_POINTS for p in lineup])
        z = trailing / SELECTION_TEMPERATURE
        soft = np.exp(z - z.max())
        soft /= soft.sum()
        pct = 0.5 * soft + 0.5 / N_PLAYERS

        form[lineup_arr] = cfg.form_persistence * form[lineup_arr] + 0.5 * cfg.noise_scale * rng.standard_normal(N_PLAYERS)
        points = skill[lineup_arr] + form[lineup_arr] + cfg.noise_scale * rng.standard_normal(N_PLAYERS)

        rid = f"R{r:05d}"
        for k, p in enumerate(lineup):
            pts = float(points[k])
            recent[p].append(pts)
            records.append(PlayerRoundRecord(ids[p], rid, date, pts, float(pct[k])))

    return HistoryStore(records, latent_skill={ids[i]: float(skill[i]) for i in range(cfg.n_players)})


def write_history_csv(store: HistoryStore, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in store.records:
            w.writerow([r.player, r.round_id, r.date.isoformat(), repr(r.raw_points), repr(r.selection_pct)])


def _parse_float(value: str, lineno: int, name: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise HistoryFormatError(f"line {lineno}: field '{name}' is not a number: {value!r}") from None
    if not math.isfinite(x):
        raise HistoryFormatError(f"line {lineno}: field '{name}' must be finite, got {value!r}")
    return x


def _parse_date(value: str, lineno: int) -> dt.date:
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise HistoryFormatError(f"line {lineno}: field 'date' is not an ISO date (YYYY-MM-DD): {value!r}") from None


def ingest_csv(path) -> HistoryStore:
    """Parse and validate a history CSV (``player_id,round_id,date,raw_points,selection_pct``)."""
    records = []
    seen: dict[tuple[str, str], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise HistoryFormatError("line 1: missing header")
        if [h.strip() for h in header] != HISTORY_HEADER:
            raise HistoryFormatError(f"line 1: header must be {','.join(HISTORY_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(HISTORY_HEADER):
                raise HistoryFormatError(f"line {lineno}: expected {len(HISTORY_HEADER)} fields, got {len(row)}")
            player, round_id, date_s, pts_s, pct_s = (c.strip() for c in row)
            if not player:
                raise HistoryFormatError(f"line {lineno}: field 'player_id' is empty")
            if not round_id:
                raise HistoryFormatError(f"line {lineno}: field 'round_id' is empty")
            date = _parse_date(date_s, lineno)
            pts = _parse_float(pts_s, lineno, "raw_points")
            pct = _parse_float(pct_s, lineno, "selection_pct")
            if not 0.0 <= pct <= 1.0:
                raise HistoryFormatError(f"line {lineno}: field 'selection_pct' must lie in [0, 1], got {pct_s}")
            key = (player, round_id)
            if key in seen:
                raise HistoryFormatError(
                    f"line {lineno}: duplicate (player_id, round_id) = {key}, first seen on line {seen[key]}"
                )
            seen[key] = lineno
            records.append(PlayerRoundRecord(player, round_id, date, pts, pct))
    return HistoryStore(records)


def write_rounds_manifest(store: HistoryStore, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for rid, date, players in store.rounds():
            if len(players) != N_PLAYERS:
                raise HistoryFormatError(f"round {rid!r} has {len(players)} players, expected {N_PLAYERS}")
            w.writerow([rid, date.isoformat(), *players])


def read_rounds_manifest(path) -> list[tuple[str, dt.date, tuple[str, ...]]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise HistoryFormatError("line 1: manifest header must be round_id,date,player_1..player_22")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise HistoryFormatError(f"line {lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            players = tuple(sorted(c.strip() for c in row[2:]))
            if len(set(players)) != N_PLAYERS:
                raise HistoryFormatError(f"line {lineno}: players must be {N_PLAYERS} distinct ids")
            out.append((row[0].strip(), _parse_date(row[1].strip(), lineno), players))
    return out


def _window_row(s: _PlayerSeries | None, as_of: int) -> np.ndarray:
    row = np.zeros(N_FEATURES)
    if s is None:
        return row
    lo = np.searchsorted(s.ordinals, as_of - WINDOW_DAYS, side="left")
    hi = np.searchsorted(s.ordinals, as_of, side="left")
    if hi <= lo:
        return row
    pts = s.points[lo:hi]
    age = as_of - s.ordinals[lo:hi]
    recent = pts[age <= SHORT_WINDOW_DAYS]
    w = 0.5 ** (age / EW_HALF_LIFE_DAYS)
    row[0] = pts.mean()
    row[1] = recent.mean() if recent.size else row[0]
    row[2] = pts.std()
    row[3] = pts.size
    row[4] = pts[-1]
    row[5] = float(w @ pts / w.sum())
    row[6] = pts.max()
    row[7] = pts.min()
    row[8] = s.in_dream[lo:hi].mean()
    row[9] = min(int(age[-1]), WINDOW_DAYS) / WINDOW_DAYS
    return row


def build_features(store: HistoryStore, round_players: Sequence[str], as_of: dt.date) -> np.ndarray:
    """Raw (22, 10) feature block from records dated in [as_of - 90 days, as_of).

    Columns follow ``FEATURE_NAMES``. Players with no record in the window get a zero
    row. When no match falls in the last 30 days the 30-day mean falls back to the
    90-day mean.
    """
    series = store.series()
    as_of_ord = as_of.toordinal()
    return np.stack([_window_row(series.get(p), as_of_ord) for p in round_players])


def normalize_round(raw_points) -> np.ndarray:
    x = np.asarray(raw_points, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def normalize_features(features: np.ndarray) -> np.ndarray:
    """Per-match column-wise min-max scaling; constant columns map to zero."""
    lo = features.min(axis=0)
    span = features.max(axis=0) - lo
    out = np.zeros_like(features)
    ok = span > 0
    out[:, ok] = (features[:, ok] - lo[ok]) / span[ok]
    return out


def build_round(store: HistoryStore, round_id: str, date: dt.date, players: Sequence[str]) -> Round:
    players = tuple(sorted(players))
    recs = {r.player: r for r in store.round_records(round_id)}
    missing = [p for p in players if p not in recs]
    if missing:
        raise HistoryFormatError(f"round {round_id!r}: no history rows for players {missing}")
    raw = np.array([recs[p].raw_points for p in players])
    pct = np.array([recs[p].selection_pct for p in players])
    feats = normalize_features(build_features(store, players, date))
    return Round(round_id, date, players, normalize_round(raw), feats, raw_points=raw, selection_pct=pct)


def build_rounds(store: HistoryStore, manifest=None) -> list[Round]:
    """Every round with full features, in date order. ``manifest`` defaults to ``store.rounds()``."""
    manifest = store.rounds() if manifest is None else manifest
    return [build_round(store, rid, date, players) for rid, date, players in manifest]


@dataclass(frozen=True)
class CvFold:
    train_rounds: tuple[str, ...]
    validation_rounds: tuple[str, ...]
    gap_days: int


def temporal_cv_split(
    round_ids: Sequence[str], dates: Sequence[dt.date], n_folds: int = 4, gap_days: int = 7
) -> list[CvFold]:
    """Expanding-window folds over date-sorted rounds.

    The rounds are cut into ``n_folds + 1`` contiguous segments. Fold ``k`` trains on
    segments ``0..k`` and validates on segment ``k + 1`` with the rounds dated within
    ``gap_days`` of the last training round removed.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if gap_days < 0:
        raise ValueError("gap_days must be >= 0")
    if len(round_ids) != len(dates):
        raise ValueError("round_ids and dates differ in length")
    if any(b < a for a, b in zip(dates, dates[1:])):
        raise ValueError("rounds must be sorted by date")
    n = len(round_ids)
    # each segment needs one round past the gap; rounds are at least a day apart
    minimum = (n_folds + 1) * (gap_days + 1)
    if n < n_folds + 1:
        raise ValueError(f"too few rounds for {n_folds} folds: need at least {minimum}, got {n}")
    bounds = np.linspace(0, n, n_folds + 2).round().astype(int)
    folds = []
    for k in range(n_folds):
        train_end = bounds[k + 1]
        last_train = dates[train_end - 1]
        val = [i for i in range(train_end, bounds[k + 2]) if (dates[i] - last_train).days > gap_days]
        if not val:
            raise ValueError(
                f"too few rounds for {n_folds} folds with gap {gap_days} days: need at least {minimum}, got {n}"
            )
        folds.append(CvFold(tuple(round_ids[:train_end]), tuple(round_ids[i] for i in val), gap_days))
    return folds


def load_dataset(data_dir) -> tuple[HistoryStore, list[Round]]:
    data_dir = Path(data_dir)
    history, manifest = data_dir / "history.csv", data_dir / "rounds.csv"
    if not history.exists():
        raise FileNotFoundError(f"history file not found: {history}")
    store = ingest_csv(history)
    rounds = build_rounds(store, read_rounds_manifest(manifest) if manifest.exists() else None)
    return store, rounds
