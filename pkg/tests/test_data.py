import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from teamswap.data import (
    FEATURE_NAMES,
    GeneratorConfig,
    HistoryFormatError,
    HistoryStore,
    build_features,
    generate_history,
    ingest_csv,
    load_dataset,
    normalize_features,
    normalize_round,
    read_rounds_manifest,
    temporal_cv_split,
    write_history_csv,
    write_rounds_manifest,
)
from teamswap.domain import N_PLAYERS, PlayerRoundRecord

D0 = dt.date(2022, 3, 1)


def rec(player, rid, days, pts, pct=0.1):
    return PlayerRoundRecord(player, rid, D0 + dt.timedelta(days=days), float(pts), pct)


def test_generator_config_bounds():
    with pytest.raises(ValueError, match="n_players"):
        GeneratorConfig(n_players=43)
    with pytest.raises(ValueError):
        GeneratorConfig(form_persistence=1.0)
    with pytest.raises(ValueError):
        GeneratorConfig(skill_spread=0)


def test_generator_is_deterministic(tmp_path):
    a = generate_history(GeneratorConfig(n_rounds=30, seed=9))
    b = generate_history(GeneratorConfig(n_rounds=30, seed=9))
    assert a == b
    write_history_csv(a, tmp_path / "a.csv")
    write_history_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert generate_history(GeneratorConfig(n_rounds=30, seed=10)) != a


def test_generator_shape(small_store):
    rounds = small_store.rounds()
    assert len(rounds) == 120 and len(small_store) == 120 * N_PLAYERS
    gaps = {(b[1] - a[1]).days for a, b in zip(rounds, rounds[1:])}
    assert gaps <= {1, 2, 3}
    assert all(0 <= r.selection_pct <= 1 for r in small_store.records)


def test_degenerate_generator_is_constant():
    store = generate_history(GeneratorConfig(n_rounds=40, noise_scale=0.0, form_persistence=0.0, seed=2))
    for pid, s in store.series().items():
        assert np.all(s.points == s.points[0])
        assert s.points[0] == pytest.approx(store.latent_skill[pid])


def test_window_mean_tracks_skill():
    store = generate_history(GeneratorConfig(n_rounds=500, seed=4))
    last_date = store.records[-1].date + dt.timedelta(days=1)
    players = sorted(store.latent_skill)
    means = build_features(store, players, last_date)[:, 0]
    skills = [store.latent_skill[p] for p in players]
    assert spearmanr(means, skills).statistic > 0.5


def test_csv_round_trip(tmp_path, small_store):
    path = tmp_path / "h.csv"
    write_history_csv(small_store, path)
    assert ingest_csv(path) == small_store


def test_manifest_round_trip(tmp_path, small_store):
    write_rounds_manifest(small_store, tmp_path / "m.csv")
    assert read_rounds_manifest(tmp_path / "m.csv") == small_store.rounds()
    write_history_csv(small_store, tmp_path / "history.csv")
    write_rounds_manifest(small_store, tmp_path / "rounds.csv")
    store, rounds = load_dataset(tmp_path)
    assert len(rounds) == 120 and store == small_store


def test_ingest_header_only(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("player_id,round_id,date,raw_points,selection_pct\n")
    assert len(ingest_csv(p)) == 0


@pytest.mark.parametrize(
    "row, match",
    [
        ("a,r1,2022-01-01,10,1.5", "line 2: field 'selection_pct'"),
        ("a,r1,2022-13-01,10,0.5", "line 2: field 'date'"),
        ("a,r1,2022-01-01,abc,0.5", "line 2: field 'raw_points'"),
        ("a,r1,2022-01-01,inf,0.5", "line 2: field 'raw_points'"),
        (",r1,2022-01-01,1,0.5", "line 2: field 'player_id'"),
        ("a,r1,2022-01-01,1", "line 2: expected 5 fields"),
    ],
)
def test_ingest_errors_name_line_and_field(tmp_path, row, match):
    p = tmp_path / "h.csv"
    p.write_text("player_id,round_id,date,raw_points,selection_pct\n" + row + "\n")
    with pytest.raises(HistoryFormatError, match=match):
        ingest_csv(p)


def test_ingest_duplicate(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("player_id,round_id,date,raw_points,selection_pct\na,r,2022-01-01,1,0.1\na,r,2022-01-01,2,0.1\n")
    with pytest.raises(HistoryFormatError, match="line 3: duplicate"):
        ingest_csv(p)


def test_features_empty_history():
    store = HistoryStore([rec("x", "r0", 0, 10)])
    assert np.all(build_features(store, ["y"], D0 + dt.timedelta(days=1)) == 0)
    # same-day records are not visible
    assert np.all(build_features(store, ["x"], D0) == 0)


def test_features_single_match():
    store = HistoryStore([rec("x", "r0", 0, 40)])
    row = build_features(store, ["x"], D0 + dt.timedelta(days=5))[0]
    assert row[[0, 1, 4, 5, 6, 7]].tolist() == [40.0] * 6
    assert row[2] == 0 and row[3] == 1
    assert row[9] == pytest.approx(5 / 90)
    assert row[8] == 1.0  # one-player round: the player is its own dream team
    assert len(FEATURE_NAMES) == 10


def test_features_window_and_fallback():
    store = HistoryStore([rec("x", "a", 0, 10), rec("x", "b", 10, 20), rec("x", "c", 95, 30)])
    as_of = D0 + dt.timedelta(days=96)
    row = build_features(store, ["x"], as_of)[0]
    # day 0 lies outside the 90-day window
    assert row[0] == 25 and row[3] == 2 and row[6] == 30 and row[7] == 20
    assert row[1] == 30
    store2 = HistoryStore([rec("x", "a", 0, 10), rec("x", "b", 10, 20)])
    row2 = build_features(store2, ["x"], D0 + dt.timedelta(days=60))[0]
    assert row2[1] == row2[0] == 15  # nothing in last 30 days
    assert row2[9] == pytest.approx(50 / 90)


def test_features_match_brute_force(small_store):
    rounds = small_store.rounds()
    rid, date, players = rounds[90]
    feats = build_features(small_store, players, date)
    for i, p in enumerate(players):
        pts = [r.raw_points for r in small_store.records if r.player == p and date - dt.timedelta(days=90) <= r.date < date]
        if pts:
            assert feats[i, 0] == pytest.approx(np.mean(pts))
            assert feats[i, 2] == pytest.approx(np.std(pts))
            assert feats[i, 3] == len(pts)
        else:
            assert np.all(feats[i] == 0)


def test_normalize_round_examples():
    x = np.array([20.0, 50.0, 100.0] + [60.0] * 19)
    assert normalize_round(x)[:3].tolist() == [0.0, 0.375, 1.0]
    assert np.all(normalize_round(np.full(22, 7.0)) == 0.5)


@given(st.lists(st.floats(-1e6, 1e6), min_size=22, max_size=22))
def test_normalize_round_bounds_and_order(xs):
    x = np.array(xs)
    y = normalize_round(x)
    if np.ptp(x) == 0:
        assert np.all(y == 0.5)
        return
    assert y.min() == 0 and y.max() == 1
    # monotone: a strictly smaller input never maps to a larger output
    lower = np.subtract.outer(x, x) < 0
    assert np.all(np.subtract.outer(y, y)[lower] <= 0)


def test_normalize_features_constant_column():
    f = np.ones((22, 10))
    f[:, 0] = np.arange(22)
    out = normalize_features(f)
    assert out[:, 0].min() == 0 and out[:, 0].max() == 1
    assert np.all(out[:, 1:] == 0)


def _dates(n, rng):
    out, d = [], D0
    for _ in range(n):
        out.append(d)
        d += dt.timedelta(days=int(rng.integers(1, 4)))
    return out


def test_cv_split_examples():
    rng = np.random.default_rng(0)
    dates = _dates(100, rng)
    ids = [f"r{i}" for i in range(100)]
    folds = temporal_cv_split(ids, dates, 4, 0)
    pos = {r: i for i, r in enumerate(ids)}
    for f in folds:
        assert max(pos[r] for r in f.train_rounds) < min(pos[r] for r in f.validation_rounds)
        assert not set(f.train_rounds) & set(f.validation_rounds)
    for a, b in zip(folds, folds[1:]):
        assert set(a.train_rounds) < set(b.train_rounds)
    folds7 = temporal_cv_split(ids, dates, 4, 7)
    for f in folds7:
        last = dates[pos[f.train_rounds[-1]]]
        assert all((dates[pos[v]] - last).days > 7 for v in f.validation_rounds)


def test_cv_split_errors():
    dates = [D0 + dt.timedelta(days=i) for i in range(6)]
    with pytest.raises(ValueError, match="n_folds"):
        temporal_cv_split([str(i) for i in range(6)], dates, 1)
    with pytest.raises(ValueError, match="too few rounds"):
        temporal_cv_split([str(i) for i in range(6)], dates, 4, 7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(0, 10))
def test_cv_split_gap_property(seed, n_folds, gap):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(60, 200))
    dates = _dates(n, rng)
    ids = [f"r{i}" for i in range(n)]
    try:
        folds = temporal_cv_split(ids, dates, n_folds, gap)
    except ValueError:
        return
    d = dict(zip(ids, dates))
    for f in folds:
        assert max(d[r] for r in f.train_rounds) + dt.timedelta(days=gap) < min(d[r] for r in f.validation_rounds)
