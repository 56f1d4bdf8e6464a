"""Non-RL team builders: last-match ranking, selection-% ranking, random forest, RBF SVM.

The two classifiers are trained per player ("was this player in the dream team?")
and a team is the 11 players with the highest predicted score.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.svm import SVC

from .data import HistoryStore
from .domain import Round, TeamState, dream_team, team_score, top_k


def previous_performance_team(round_: Round, store: HistoryStore) -> TeamState:
    """Top 11 by each player's most recent earlier raw points; players without history rank last."""
    series = store.series()
    as_of = round_.date.toordinal()
    last = np.full(len(round_.players), -np.inf)
    for i, pid in enumerate(round_.players):
        s = series.get(pid)
        if s is None:
            continue
        k = np.searchsorted(s.ordinals, as_of, side="left")
        if k:
            last[i] = s.points[k - 1]
    return TeamState(top_k(last))


def selection_percentage_team(round_: Round) -> TeamState:
    if round_.selection_pct is None:
        raise ValueError(f"round {round_.round_id} has no selection percentages")
    return TeamState(top_k(round_.selection_pct))


def labelled_players(rounds: Sequence[Round]) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-player features with dream-team labels (11 positives per round)."""
    X = np.concatenate([r.features for r in rounds])
    y = np.concatenate([dream_team(r).mask() for r in rounds]).astype(np.int64)
    return X, y


def team_from_scores(scores) -> TeamState:
    return TeamState(top_k(scores))


# --- random forest -------------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 10
    bootstrap_fraction: float = 1.0
    features_per_split: int = round(math.sqrt(10))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.features_per_split < 1:
            raise ValueError("forest sizes must be positive")
        if not 0 < self.bootstrap_fraction <= 1:
            raise ValueError("bootstrap_fraction must lie in (0, 1]")


@dataclass
class Tree:
    """Flat CART tree: leaves have ``feature == -1``; ``vote`` is the leaf's majority class."""

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    vote: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.vote[node]
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("left", "right", "feature", "threshold", "vote")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["vote"], dtype=np.float64),
        )


@dataclass
class ForestModel:
    trees: list
    constant: float | None = None

    def to_dict(self) -> dict:
        return {"kind": "forest", "constant": self.constant, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls([Tree.from_dict(t) for t in d["trees"]], d["constant"])


def _tree_from_sklearn(est, classes) -> Tree:
    t = est.tree_
    feature = np.where(t.children_left < 0, -1, t.feature).astype(np.int64)
    vote = classes[np.argmax(t.value[:, 0, :], axis=1)].astype(np.float64)
    return Tree(t.children_left.astype(np.int64), t.children_right.astype(np.int64), feature, t.threshold.astype(np.float64), vote)


def train_forest(X: np.ndarray, y: np.ndarray, cfg: ForestConfig = ForestConfig()) -> ForestModel:
    """Gini-split CART trees on bootstrap samples; a one-class training set gives a constant model."""
    if len(y) == 0:
        raise ValueError("empty training set")
    classes = np.unique(y)
    if classes.size == 1:
        return ForestModel([], float(classes[0]))
    rf = RandomForestClassifier(
        n_estimators=cfg.n_trees,
        criterion="gini",
        max_depth=cfg.max_depth,
        max_features=min(cfg.features_per_split, X.shape[1]),
        bootstrap=True,
        max_samples=None if cfg.bootstrap_fraction == 1.0 else cfg.bootstrap_fraction,
        random_state=cfg.seed % 2**32,
        n_jobs=1,
    )
    rf.fit(X, y)
    return ForestModel([_tree_from_sklearn(est, rf.classes_) for est in rf.estimators_])


def predict_forest(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Fraction of trees voting for the positive class."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if model.constant is not None:
        return np.full(len(X), model.constant)
    return np.mean([t.predict(X) for t in model.trees], axis=0)


# --- RBF support vector machine ---------------------------------------------------------


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    bandwidth: float | None = None  # None: median heuristic
    max_train: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be > 0")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")


def rbf_kernel(A: np.ndarray, B: np.ndarray, bandwidth: float) -> np.ndarray:
    """exp(-||a - b||^2 / (2 bandwidth^2))."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * bandwidth**2))


def median_bandwidth(X: np.ndarray, rng=None, max_points: int = 1000) -> float:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if len(X) > max_points:
        X = X[rng.choice(len(X), max_points, replace=False)]
    i, j = np.triu_indices(len(X), k=1)
    d = np.sqrt(((X[i] - X[j]) ** 2).sum(1))
    med = float(np.median(d[d > 0])) if np.any(d > 0) else 1.0
    return med


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    coef: np.ndarray  # y_i * alpha_i
    intercept: float
    bandwidth: float

    def to_dict(self) -> dict:
        return {
            "kind": "svm",
            "support_vectors": self.support_vectors.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "bandwidth": self.bandwidth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(np.array(d["support_vectors"]), np.array(d["coef"]), float(d["intercept"]), float(d["bandwidth"]))


def train_svm(X: np.ndarray, y: np.ndarray, cfg: SvmConfig = SvmConfig(), sample_weight=None) -> SvmModel:
    """Soft-margin RBF SVM (exact dual solve) on at most ``cfg.max_train`` points."""
    y = np.asarray(y)
    if np.unique(y).size < 2:
        raise ValueError("SVM training needs both classes")
    rng = np.random.default_rng([cfg.seed, 21])
    if len(X) > cfg.max_train:
        idx = np.sort(rng.choice(len(X), cfg.max_train, replace=False))
        X, y = X[idx], y[idx]
        sample_weight = None if sample_weight is None else np.asarray(sample_weight)[idx]
    bw = cfg.bandwidth or median_bandwidth(X, rng)
    svc = SVC(C=cfg.C, kernel="rbf", gamma=1.0 / (2.0 * bw**2))
    svc.fit(X, y, sample_weight=sample_weight)
    # sklearn orients the decision function towards classes_[1]
    sign = 1.0 if svc.classes_[1] == 1 else -1.0
    return SvmModel(svc.support_vectors_.copy(), sign * svc.dual_coef_[0].copy(), sign * float(svc.intercept_[0]), bw)


def predict_svm(model: SvmModel, X: np.ndarray) -> np.ndarray:
    """Signed decision value; positive means 'in the dream team'."""
    K = rbf_kernel(np.asarray(X, dtype=np.float64), model.support_vectors, model.bandwidth)
    return K @ model.coef + model.intercept


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return {"forest": ForestModel, "svm": SvmModel}[d["kind"]].from_dict(d)


# --- grid search --------------------------------------------------------------------------


def _team_quality(predict, rounds: Sequence[Round]) -> float:
    return float(np.mean([team_score(team_from_scores(predict(r.features)), r) / team_score(dream_team(r), r) for r in rounds]))


def inner_split(rounds: Sequence[Round], frac: float = 0.8) -> tuple[list, list]:
    cut = max(1, min(len(rounds) - 1, int(len(rounds) * frac)))
    return list(rounds[:cut]), list(rounds[cut:])


def grid_search_forest(rounds: Sequence[Round], grid: dict | None = None, base: ForestConfig = ForestConfig()) -> ForestConfig:
    """Pick (max_depth, n_trees) by mean team score ratio on the chronologically last 20% of rounds."""
    grid = grid or {"max_depth": [5, 10], "n_trees": [50, 100]}
    fit, val = inner_split(rounds)
    Xf, yf = labelled_players(fit)
    best, best_q = base, -np.inf
    for depth, n in itertools.product(grid["max_depth"], grid["n_trees"]):
        cfg = ForestConfig(**{**asdict(base), "max_depth": depth, "n_trees": n})
        m = train_forest(Xf, yf, cfg)
        q = _team_quality(lambda X: predict_forest(m, X), val)
        if q > best_q:
            best, best_q = cfg, q
    return best


def grid_search_svm(rounds: Sequence[Round], grid: dict | None = None, base: SvmConfig = SvmConfig()) -> SvmConfig:
    """Pick (C, bandwidth multiplier) by mean team score ratio on the last 20% of rounds."""
    grid = grid or {"C": [0.1, 1.0, 10.0], "bandwidth_scale": [0.5, 1.0, 2.0]}
    fit, val = inner_split(rounds)
    Xf, yf = labelled_players(fit)
    bw0 = base.bandwidth or median_bandwidth(Xf, np.random.default_rng([base.seed, 21]))
    best, best_q = base, -np.inf
    for C, scale in itertools.product(grid["C"], grid["bandwidth_scale"]):
        cfg = SvmConfig(**{**asdict(base), "C": C, "bandwidth": bw0 * scale})
        m = train_svm(Xf, yf, cfg)
        q = _team_quality(lambda X: predict_svm(m, X), val)
        if q > best_q:
            best, best_q = cfg, q
    return best


def forest_team(model: ForestModel, round_: Round) -> TeamState:
    return team_from_scores(predict_forest(model, round_.features))


def svm_team(model: SvmModel, round_: Round) -> TeamState:
    return team_from_scores(predict_svm(model, round_.features))

