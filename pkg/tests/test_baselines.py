import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teamswap import baselines as bl
from teamswap.data import HistoryStore, temporal_cv_split
from teamswap.domain import N_PLAYERS, PlayerRoundRecord, Round, dream_team
from teamswap.evaluation import PopulationConfig, fold_populations, split_rounds, team_percentile

from conftest import make_round

DAY0 = dt.date(2022, 1, 1)
PLAYERS = [f"P{i:02d}" for i in range(N_PLAYERS)]


def sort_oracle(values):
    """Top 11 by value, ties to the lower index, via a plain Python sort."""
    return tuple(sorted(sorted(range(len(values)), key=lambda i: (-values[i], i))[:11]))


def history_with_last(last_points, missing=()):
    """Two earlier rounds per player; the more recent one carries ``last_points``."""
    recs = []
    for i, p in enumerate(PLAYERS):
        if i in missing:
            continue
        recs.append(PlayerRoundRecord(p, "A", DAY0, 100.0 - last_points[i], 0.5))
        recs.append(PlayerRoundRecord(p, "B", DAY0 + dt.timedelta(days=3), float(last_points[i]), 0.5))
    return HistoryStore(recs)


def target_round(sel=None):
    return Round("C", DAY0 + dt.timedelta(days=10), tuple(PLAYERS), np.linspace(0, 1, 22), np.zeros((22, 10)), selection_pct=sel)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=22, max_size=22))
def test_previous_performance_matches_sort_oracle(points):
    team = bl.previous_performance_team(target_round(), history_with_last(points))
    assert team.selected == sort_oracle(points)


def test_previous_performance_missing_history_ranks_last():
    pts = np.full(22, -50.0)
    missing = set(range(11))
    team = bl.previous_performance_team(target_round(), history_with_last(pts, missing))
    assert team.selected == tuple(range(11, 22))


def test_previous_performance_ignores_same_day_and_future():
    recs = [PlayerRoundRecord(p, "C", DAY0, float(i), 0.5) for i, p in enumerate(PLAYERS)]
    store = HistoryStore(recs)
    r = make_round(np.zeros(22), round_id="C", date=DAY0)
    assert bl.previous_performance_team(r, store).selected == tuple(range(11))


def test_selection_percentage_examples():
    dec = np.linspace(0.9, 0.1, 22)
    assert bl.selection_percentage_team(target_round(dec)).selected == tuple(range(11))
    assert bl.selection_percentage_team(target_round(np.full(22, 0.3))).selected == tuple(range(11))
    with pytest.raises(ValueError, match="no selection percentages"):
        bl.selection_percentage_team(target_round())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.1, 0.2, 0.5, 1.0]), min_size=22, max_size=22))
def test_selection_percentage_sort_oracle(pct):
    assert bl.selection_percentage_team(target_round(np.array(pct))).selected == sort_oracle(pct)


def test_labels_have_eleven_positives_per_round(small_rounds):
    X, y = bl.labelled_players(small_rounds[:20])
    assert X.shape == (440, 10) and set(np.unique(y)) == {0, 1}
    assert np.all(y.reshape(20, 22).sum(axis=1) == 11)


def test_forest_separable_and_probability_grid():
    rng = np.random.default_rng(0)
    X = rng.random((200, 1))
    y = (X[:, 0] > 0.37).astype(int)
    model = bl.train_forest(X, y, bl.ForestConfig(n_trees=25, max_depth=1, features_per_split=1, seed=1))
    assert np.mean((bl.predict_forest(model, X) > 0.5) == y) == 1.0
    p = bl.predict_forest(model, rng.random((500, 1)))
    assert np.all((p >= 0) & (p <= 1)) and np.allclose(p * 25, np.round(p * 25))


def test_forest_single_class_is_constant():
    m = bl.train_forest(np.ones((5, 3)), np.zeros(5, dtype=int))
    assert np.all(bl.predict_forest(m, np.random.default_rng(0).random((4, 3))) == 0)
    with pytest.raises(ValueError):
        bl.train_forest(np.ones((0, 3)), np.zeros(0))


def test_forest_config_defaults():
    cfg = bl.ForestConfig()
    assert (cfg.n_trees, cfg.max_depth, cfg.features_per_split, cfg.bootstrap_fraction) == (100, 10, 3, 1.0)
    with pytest.raises(ValueError):
        bl.ForestConfig(n_trees=0)


def test_svm_gaussian_clouds():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(-2, 1, (300, 2)), rng.normal(2, 1, (300, 2))])
    y = np.repeat([0, 1], 300)
    idx = rng.permutation(600)
    tr, te = idx[:400], idx[400:]
    m = bl.train_svm(X[tr], y[tr])
    assert np.mean((bl.predict_svm(m, X[te]) > 0) == y[te]) > 0.95


def test_svm_errors_and_kernel_identity():
    with pytest.raises(ValueError, match="both classes"):
        bl.train_svm(np.ones((4, 2)), np.ones(4))
    with pytest.raises(ValueError):
        bl.SvmConfig(C=0)
    x = np.random.default_rng(0).random((5, 3))
    assert np.allclose(np.diag(bl.rbf_kernel(x, x, 0.7)), 1.0)


def test_svm_weight_monotone():
    """Counting one positive point more often never lowers its decision value."""
    rng = np.random.default_rng(2)
    for trial in range(10):
        X = rng.normal(size=(12, 2))
        y = (rng.random(12) < 0.5).astype(int)
        y[:2] = [1, 0]
        cfg = bl.SvmConfig(bandwidth=1.0)
        prev = -np.inf
        for w in (1.0, 2.0, 4.0, 8.0):
            weight = np.ones(12)
            weight[0] = w
            d = bl.predict_svm(bl.train_svm(X, y, cfg, sample_weight=weight), X[:1])[0]
            assert d >= prev - 1e-6
            prev = d


def test_model_dump_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    X, y = rng.random((80, 4)), (rng.random(80) < 0.5).astype(int)
    for model, pred in ((bl.train_forest(X, y, bl.ForestConfig(n_trees=5)), bl.predict_forest), (bl.train_svm(X, y), bl.predict_svm)):
        bl.save_model(model, tmp_path / "m.json")
        assert np.array_equal(pred(bl.load_model(tmp_path / "m.json"), X), pred(model, X))


def test_baselines_deterministic(small_rounds):
    X, y = bl.labelled_players(small_rounds[30:60])
    a = bl.train_forest(X, y, bl.ForestConfig(seed=4, n_trees=10))
    b = bl.train_forest(X, y, bl.ForestConfig(seed=4, n_trees=10))
    assert np.array_equal(bl.predict_forest(a, X), bl.predict_forest(b, X))
    assert np.array_equal(bl.predict_svm(bl.train_svm(X, y), X), bl.predict_svm(bl.train_svm(X, y), X))


def test_forest_beats_previous_performance_on_fold(small_store, small_rounds):
    rounds = small_rounds[30:]
    folds = temporal_cv_split([r.round_id for r in rounds], [r.date for r in rounds], 2, 7)
    train, val = split_rounds(rounds, folds[-1])
    model = bl.train_forest(*bl.labelled_players(train), bl.ForestConfig(seed=0))
    pops = fold_populations(val, PopulationConfig(population_size=1000, seed=1))
    forest = np.mean([team_percentile(bl.forest_team(model, r), r, pops[r.round_id]) for r in val])
    prev = np.mean([team_percentile(bl.previous_performance_team(r, small_store), r, pops[r.round_id]) for r in val])
    assert forest > prev


def test_grid_search_returns_grid_member(small_rounds):
    cfg = bl.grid_search_forest(small_rounds[30:60], {"max_depth": [2, 4], "n_trees": [5]})
    assert cfg.max_depth in (2, 4) and cfg.n_trees == 5
    scfg = bl.grid_search_svm(small_rounds[30:60], {"C": [1.0], "bandwidth_scale": [1.0, 2.0]})
    assert scfg.C == 1.0 and scfg.bandwidth > 0


def test_every_baseline_team_is_valid(small_store, small_rounds):
    r = small_rounds[-1]
    for team in (bl.previous_performance_team(r, small_store), bl.selection_percentage_team(r), dream_team(r)):
        assert len(set(team.selected)) == 11 and all(0 <= i < 22 for i in team.selected)
