"""Evaluation protocols: simulated-user percentiles, score ratios, alpha sweeps, fold benchmarks."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import baselines, dqn, ppo
from .data import CvFold, HistoryStore
from .domain import N_PLAYERS, TEAM_SIZE, Round, TeamState, dream_team, team_score
from .env import EnvConfig, random_team, run_episode
from .seeding import derive_seed

log = logging.getLogger(__name__)

STRATEGIES = ("ppo", "dqn", "rf", "svm", "prev-perf", "sel-pct", "random")
RL_STRATEGIES = ("ppo", "dqn")
REPORT_FIELDS = ["fold", "strategy", "mean_percentile", "mean_ratio", "goal_rate", "mean_swaps"]
HISTOGRAM_FIELDS = ["bin_left", "bin_right", "density_before", "density_after"]
SCORE_TIE_TOL = 1e-9


@dataclass(frozen=True)
class PopulationConfig:
    population_size: int = 10_000
    greedy_fraction: float = 0.7
    random_fraction: float = 0.3
    rank_noise: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 100:
            raise ValueError("population_size must be >= 100")
        if abs(self.greedy_fraction + self.random_fraction - 1.0) > 1e-12:
            raise ValueError("greedy_fraction and random_fraction must sum to 1")
        if min(self.greedy_fraction, self.random_fraction) < 0 or self.rank_noise < 0:
            raise ValueError("fractions and rank_noise must be non-negative")


@dataclass
class Population:
    teams: np.ndarray  # (n, 11) sorted player indices
    scores: np.ndarray

    def __len__(self):
        return len(self.scores)

    def team_states(self) -> list[TeamState]:
        return [TeamState(tuple(t)) for t in self.teams]


def simulate_population(round_: Round, cfg: PopulationConfig) -> Population:
    """Simulated contest entrants for one round.

    Greedy entrants rank players by their 90-day mean (feature column 0), jitter the
    ranks with Gaussian noise of scale ``rank_noise`` and keep the best 11; random
    entrants pick a uniform 11-subset.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.population_size
    n_greedy = int(round(cfg.greedy_fraction * n))
    rank = np.empty(N_PLAYERS)
    order = np.lexsort((np.arange(N_PLAYERS), -round_.features[:, 0]))
    rank[order] = np.arange(N_PLAYERS)
    keys = np.empty((n, N_PLAYERS))
    keys[:n_greedy] = rank + cfg.rank_noise * rng.standard_normal((n_greedy, N_PLAYERS))
    keys[n_greedy:] = rng.random((n - n_greedy, N_PLAYERS))
    # stable sort keeps ties on the lower index
    teams = np.sort(np.argsort(keys, axis=1, kind="stable")[:, :TEAM_SIZE], axis=1)
    scores = round_.normalized_points[teams].sum(axis=1)
    return Population(teams, scores)


def percentile(score: float, population_scores) -> float:
    """Share of the population scoring strictly lower, plus half the ties."""
    pop = np.asarray(population_scores, dtype=np.float64)
    if pop.size == 0:
        raise ValueError("empty population")
    below = np.sum(pop < score - SCORE_TIE_TOL)
    ties = np.sum(np.abs(pop - score) <= SCORE_TIE_TOL)
    return float((below + 0.5 * ties) / pop.size)


def team_percentile(team: TeamState, round_: Round, population: Population) -> float:
    return percentile(team_score(team, round_), population.scores)


def score_ratio(team: TeamState, round_: Round) -> float:
    return team_score(team, round_) / team_score(dream_team(round_), round_)


# --- strategies ------------------------------------------------------------------------------


@dataclass
class Pick:
    team: TeamState
    steps: int | None = None
    reached_goal: bool | None = None


Picker = Callable[[Round, int], Pick]


INFERENCE_MODES = ("stochastic", "deterministic")


def rl_picker(agent, env_config: EnvConfig, mode: str = "stochastic") -> Picker:
    """Team from a policy rollout; ``seed`` fixes the random start team.

    ``stochastic`` acts as each agent does by default after training: PPO samples
    from its policy, DQN is epsilon-greedy at its final exploration rate.
    ``deterministic`` takes the argmax action for both.
    """
    if mode not in INFERENCE_MODES:
        raise ValueError(f"inference mode must be one of {INFERENCE_MODES}, got {mode!r}")
    stochastic = mode == "stochastic"

    def pick(round_: Round, seed: int) -> Pick:
        if isinstance(agent, ppo.PpoAgent):
            out = ppo.act_episode(agent, round_, mode="sample" if stochastic else "argmax", seed=seed, env_config=env_config)
        else:
            eps = agent.config.final_epsilon if stochastic else 0.0
            out = dqn.act_episode(agent, round_, seed=seed, env_config=env_config, epsilon=eps)
        return Pick(out.best_state, out.steps, out.reached_goal)

    return pick


def random_picker(round_: Round, seed: int) -> Pick:
    return Pick(random_team(np.random.default_rng(seed)))


@dataclass
class FoldModels:
    """Per-fold trained models; RL agents may be absent when not requested."""

    ppo: object | None = None
    dqn: object | None = None
    forest: baselines.ForestModel | None = None
    svm: baselines.SvmModel | None = None


def make_picker(
    strategy: str, models: FoldModels, store: HistoryStore | None, env_config: EnvConfig, inference_mode: str = "stochastic"
) -> Picker:
    if strategy == "ppo" or strategy == "dqn":
        agent = getattr(models, strategy)
        if agent is None:
            raise LookupError(f"missing model checkpoint for strategy '{strategy}'")
        return rl_picker(agent, env_config, inference_mode)
    if strategy == "rf":
        if models.forest is None:
            raise LookupError("missing model for strategy 'rf'")
        return lambda r, s: Pick(baselines.forest_team(models.forest, r))
    if strategy == "svm":
        if models.svm is None:
            raise LookupError("missing model for strategy 'svm'")
        return lambda r, s: Pick(baselines.svm_team(models.svm, r))
    if strategy == "prev-perf":
        if store is None:
            raise LookupError("strategy 'prev-perf' needs the history store")
        return lambda r, s: Pick(baselines.previous_performance_team(r, store))
    if strategy == "sel-pct":
        return lambda r, s: Pick(baselines.selection_percentage_team(r))
    if strategy == "random":
        return random_picker
    raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")


# --- per-fold evaluation -------------------------------------------------------------------------


@dataclass
class StrategyResult:
    fold: int
    strategy: str
    percentiles: list
    ratios: list
    goal_rate: float
    mean_swaps: float | None

    @property
    def mean_percentile(self) -> float:
        return float(np.mean(self.percentiles))

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratios))

    def row(self) -> dict:
        return {
            "fold": self.fold,
            "strategy": self.strategy,
            "mean_percentile": self.mean_percentile,
            "mean_ratio": self.mean_ratio,
            "goal_rate": self.goal_rate,
            "mean_swaps": self.mean_swaps,
        }


def evaluate_picker(
    picker: Picker,
    rounds: Sequence[Round],
    fold: int,
    strategy: str,
    alpha: float,
    seed: int,
    populations: Mapping[str, Population] | None = None,
) -> StrategyResult:
    """Score one strategy on validation rounds.

    ``goal_rate`` is the share of rounds whose team reaches ``alpha`` times the dream
    score; ``mean_swaps`` is only defined for rollout-based strategies.
    """
    pct, ratios, steps, goals = [], [], [], []
    for r in rounds:
        pick = picker(r, derive_seed(seed, "start", r.round_id))
        ratio = score_ratio(pick.team, r)
        ratios.append(ratio)
        goals.append(ratio >= alpha - 1e-9)
        if pick.steps is not None:
            steps.append(pick.steps)
        if populations is not None:
            pct.append(team_percentile(pick.team, r, populations[r.round_id]))
    return StrategyResult(
        fold, strategy, pct, ratios, float(np.mean(goals)), float(np.mean(steps)) if steps else None
    )


def fold_populations(rounds: Sequence[Round], cfg: PopulationConfig) -> dict[str, Population]:
    return {r.round_id: simulate_population(r, replace(cfg, seed=derive_seed(cfg.seed, "population", r.round_id))) for r in rounds}


def density_histogram(before, after, bins: int = 20) -> list[dict]:
    edges = np.linspace(0.0, 1.0, bins + 1)
    d_before, _ = np.histogram(np.clip(before, 0, 1), bins=edges, density=True)
    d_after, _ = np.histogram(np.clip(after, 0, 1), bins=edges, density=True)
    return [
        {"bin_left": float(edges[i]), "bin_right": float(edges[i + 1]), "density_before": float(d_before[i]), "density_after": float(d_after[i])}
        for i in range(bins)
    ]


@dataclass
class EvalReport:
    results: list = field(default_factory=list)
    histograms: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [r.row() for r in self.results]

    def mean_over_folds(self, strategy: str, key: str = "mean_percentile") -> float:
        return float(np.mean([r.row()[key] for r in self.results if r.strategy == strategy]))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "notes": self.notes,
            "rows": self.rows(),
            "ratios": {f"{r.fold}:{r.strategy}": r.ratios for r in self.results},
            "summary": {
                s: {"mean_percentile": self.mean_over_folds(s), "mean_ratio": self.mean_over_folds(s, "mean_ratio")}
                for s in dict.fromkeys(r.strategy for r in self.results)
            },
        }

    def write(self, out_dir, stem: str = "eval_report") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / f"{stem}.json", out_dir / f"{stem}.csv"]
        with open(paths[0], "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_csv(paths[1], REPORT_FIELDS, self.rows())
        for name, hist in sorted(self.histograms.items()):
            p = out_dir / f"ratio_density_{name}.csv"
            write_csv(p, HISTOGRAM_FIELDS, hist)
            paths.append(p)
        return paths


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, fields: Sequence[str], rows: Sequence[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row[f]) for f in fields])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def split_rounds(rounds: Sequence[Round], fold: CvFold) -> tuple[list[Round], list[Round]]:
    by_id = {r.round_id: r for r in rounds}
    return [by_id[i] for i in fold.train_rounds], [by_id[i] for i in fold.validation_rounds]


def train_fold_models(
    rounds: Sequence[Round],
    folds: Sequence[CvFold],
    strategies: Sequence[str] = STRATEGIES,
    ppo_config: "ppo.PpoConfig | None" = None,
    dqn_config: "dqn.DqnConfig | None" = None,
    forest_config: baselines.ForestConfig = baselines.ForestConfig(),
    svm_config: baselines.SvmConfig = baselines.SvmConfig(),
    env_config: EnvConfig = EnvConfig(),
) -> tuple[list[FoldModels], list[FoldModels]]:
    """Fit every model the strategies need on each fold's training rounds.

    Returns ``(trained, untrained)``; the untrained agents share the trained agents'
    initial weights, for before/after comparisons. Seeds are derived per fold.
    """
    trained, untrained = [], []
    for k, fold in enumerate(folds):
        train_r, _ = split_rounds(rounds, fold)
        m, u = FoldModels(), FoldModels()
        if "ppo" in strategies:
            cfg = replace(ppo_config or ppo.PpoConfig(), seed=derive_seed((ppo_config or ppo.PpoConfig()).seed, "fold", k))
            u.ppo = ppo.PpoAgent.create(cfg, env_config)
            m.ppo, _, _ = ppo.train(train_r, cfg, env_config)
        if "dqn" in strategies:
            cfg = replace(dqn_config or dqn.DqnConfig(), seed=derive_seed((dqn_config or dqn.DqnConfig()).seed, "fold", k))
            u.dqn = dqn.DqnAgent.create(cfg, env_config)
            m.dqn, _, _ = dqn.train(train_r, cfg, env_config)
        if "rf" in strategies or "svm" in strategies:
            X, y = baselines.labelled_players(train_r)
            if "rf" in strategies:
                m.forest = baselines.train_forest(X, y, replace(forest_config, seed=derive_seed(forest_config.seed, "fold", k)))
            if "svm" in strategies:
                m.svm = baselines.train_svm(X, y, replace(svm_config, seed=derive_seed(svm_config.seed, "fold", k)))
        trained.append(m)
        untrained.append(u)
    return trained, untrained


def run_benchmark(
    rounds: Sequence[Round],
    folds: Sequence[CvFold],
    models: Sequence[FoldModels],
    strategies: Sequence[str] = STRATEGIES,
    store: HistoryStore | None = None,
    population: PopulationConfig = PopulationConfig(),
    inference_env: EnvConfig | None = None,
    seed: int = 0,
    untrained: Sequence[FoldModels] | None = None,
    inference_mode: str = "stochastic",
) -> EvalReport:
    """Every strategy on every fold's validation rounds against the simulated population.

    When ``untrained`` agents are supplied, a before/after score-ratio histogram is
    added per fold for each RL strategy.
    """
    inference_env = inference_env or EnvConfig()
    report = EvalReport(
        config={
            "strategies": list(strategies),
            "population": asdict(population),
            "inference_env": asdict(inference_env),
            "inference_mode": inference_mode,
            "seed": seed,
            "n_folds": len(folds),
        },
        notes=[
            "percentiles are against a simulated entrant population, not real contest users",
            "the SVM baseline is an exact soft-margin RBF SVM (C and bandwidth as configured)",
        ],
    )
    for k, fold in enumerate(folds):
        _, val = split_rounds(rounds, fold)
        pops = fold_populations(val, replace(population, seed=derive_seed(population.seed, "fold", k)))
        for strategy in strategies:
            picker = make_picker(strategy, models[k], store, inference_env, inference_mode)
            res = evaluate_picker(picker, val, k, strategy, inference_env.alpha, derive_seed(seed, "eval", k), pops)
            report.results.append(res)
            log.info("fold %d %-9s percentile=%.3f ratio=%.3f", k, strategy, res.mean_percentile, res.mean_ratio)
            if untrained is not None and strategy in RL_STRATEGIES and getattr(untrained[k], strategy) is not None:
                before = evaluate_picker(
                    make_picker(strategy, untrained[k], store, inference_env, inference_mode), val, k, strategy, inference_env.alpha, derive_seed(seed, "eval", k)
                )
                report.histograms[f"{strategy}_fold{k}"] = density_histogram(before.ratios, res.ratios)
    return report


# --- alpha sweep ---------------------------------------------------------------------------------

SWEEP_FIELDS = ["alpha", "fold", "accuracy", "train_goal_rate", "eval_goal_rate", "episodes"]
SWEEP_SUMMARY_FIELDS = ["alpha", "accuracy_mean", "accuracy_std", "train_goal_rate_mean", "train_goal_rate_std"]


def sweep_alpha(
    rounds: Sequence[Round],
    folds: Sequence[CvFold],
    alphas: Sequence[float],
    ppo_config: "ppo.PpoConfig",
    env_config: EnvConfig = EnvConfig(),
    seed: int = 0,
    inference_env: EnvConfig | None = None,
    inference_mode: str = "stochastic",
) -> tuple[list[dict], list[dict]]:
    """Fresh PPO agent per (alpha, fold) with an identical step budget.

    Accuracy is the mean validation score ratio. ``train_goal_rate`` is the share of
    training episodes that ended at the goal. Returns ``(cell_rows, summary_rows)``;
    the summary has mean and standard deviation across folds per alpha. Without an
    ``inference_env`` the agent is evaluated under its own training alpha.
    """
    for a in alphas:
        if not 0.7 <= a <= 1.0:
            raise ValueError(f"alpha {a} outside [0.7, 1.0]")
    cells = []
    for alpha in alphas:
        for k, fold in enumerate(folds):
            train_r, val = split_rounds(rounds, fold)
            env = replace(env_config, alpha=alpha)
            cfg = replace(ppo_config, seed=derive_seed(seed, "sweep", k))
            agent, _, stats = ppo.train(train_r, cfg, env)
            inf = inference_env or env
            res = evaluate_picker(rl_picker(agent, inf, inference_mode), val, k, "ppo", alpha, derive_seed(seed, "eval", k))
            cells.append(
                {
                    "alpha": alpha,
                    "fold": k,
                    "accuracy": res.mean_ratio,
                    "train_goal_rate": float(np.mean(stats.goals)) if stats.goals else 0.0,
                    "eval_goal_rate": res.goal_rate,
                    "episodes": len(stats.goals),
                }
            )
            log.info("sweep alpha=%.2f fold=%d accuracy=%.3f goal_rate=%.3f", alpha, k, cells[-1]["accuracy"], cells[-1]["train_goal_rate"])
    summary = []
    for alpha in alphas:
        acc = [c["accuracy"] for c in cells if c["alpha"] == alpha]
        gr = [c["train_goal_rate"] for c in cells if c["alpha"] == alpha]
        summary.append(
            {
                "alpha": alpha,
                "accuracy_mean": float(np.mean(acc)),
                "accuracy_std": float(np.std(acc)),
                "train_goal_rate_mean": float(np.mean(gr)),
                "train_goal_rate_std": float(np.std(gr)),
            }
        )
    return cells, summary


def count_inversions(values: Sequence[float], tolerance: float = 0.0) -> int:
    """Adjacent increases larger than ``tolerance`` in a sequence expected to be non-increasing."""
    return int(sum(b - a > tolerance for a, b in zip(values, values[1:])))
