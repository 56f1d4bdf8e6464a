"""Desk-scale reproductions of the headline experiments on synthetic data.

Each function runs one experiment end to end and returns a small result object with
the measured numbers and a ``passed`` flag for its acceptance threshold. The scripts
in ``scripts/`` and the acceptance tests share these entry points.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import dqn, evaluation, ppo
from .data import GeneratorConfig, build_rounds, generate_history, temporal_cv_split
from .env import EnvConfig
from .seeding import derive_seed


@dataclass
class Experiment:
    store: object
    rounds: list
    folds: list


def synthetic_experiment(seed: int = 0, n_rounds: int = 300, burn_in: int = 30, n_folds: int = 4, gap_days: int = 7) -> Experiment:
    store = generate_history(GeneratorConfig(n_rounds=n_rounds, seed=derive_seed(seed, "generator")))
    rounds = build_rounds(store)[burn_in:]
    folds = temporal_cv_split([r.round_id for r in rounds], [r.date for r in rounds], n_folds, gap_days)
    return Experiment(store, rounds, folds)


# --- training trend ------------------------------------------------------------------------


@dataclass
class TrendResult:
    first: float
    last: float
    runtime: float
    episodes: int
    rewards: list = field(repr=False)

    @property
    def gain(self) -> float:
        return self.last - self.first

    def passed(self, min_gain: float = 5.0, max_runtime: float = 1200.0) -> bool:
        return self.gain >= min_gain and self.last > 0 and self.runtime < max_runtime


def ppo_training_trend(
    n_rounds: int = 200, burn_in: int = 40, alpha: float = 0.8, total_timesteps: int = 200_000, seed: int = 0, window: int = 500
) -> TrendResult:
    """Train PPO once and compare mean episodic reward of the first and last ``window`` episodes."""
    store = generate_history(GeneratorConfig(n_rounds=n_rounds, seed=seed))
    rounds = build_rounds(store)[burn_in:]
    cfg = ppo.PpoConfig(total_timesteps=total_timesteps, seed=seed)
    start = time.perf_counter()
    _, _, stats = ppo.train(rounds, cfg, EnvConfig(alpha=alpha))
    runtime = time.perf_counter() - start
    r = np.asarray(stats.rewards)
    return TrendResult(float(r[:window].mean()), float(r[-window:].mean()), runtime, len(r), list(r))


# --- benchmark ----------------------------------------------------------------------------


@dataclass
class Budget:
    """Training budget for the benchmark agents; everything else is at its default."""

    ppo_timesteps: int = 200_000
    dqn_timesteps: int = 200_000
    train_alpha: float = 0.8
    inference_alpha: float = 1.0
    inference_mode: str = "stochastic"
    population_size: int = 10_000


def benchmark(seed: int, budget: Budget = Budget(), strategies: Sequence[str] = evaluation.STRATEGIES, exp: Experiment | None = None):
    """Train every model on each fold of one synthetic dataset and score all strategies.

    Returns ``(report, trained_models)``.
    """
    exp = exp or synthetic_experiment(seed)
    env = EnvConfig(alpha=budget.train_alpha)
    trained, untrained = evaluation.train_fold_models(
        exp.rounds,
        exp.folds,
        strategies,
        ppo.PpoConfig(total_timesteps=budget.ppo_timesteps, seed=derive_seed(seed, "ppo")),
        dqn.DqnConfig(total_timesteps=budget.dqn_timesteps, seed=derive_seed(seed, "dqn")),
        env_config=env,
    )
    report = evaluation.run_benchmark(
        exp.rounds,
        exp.folds,
        trained,
        strategies,
        exp.store,
        evaluation.PopulationConfig(population_size=budget.population_size, seed=derive_seed(seed, "population")),
        replace(env, alpha=budget.inference_alpha),
        derive_seed(seed, "evaluate"),
        untrained,
        budget.inference_mode,
    )
    return report, trained


def rescore(report_models, exp: Experiment, seed: int, budget: Budget, inference_mode: str, strategies=("ppo", "dqn")):
    """Re-run only the RL strategies of a finished benchmark under another inference mode."""
    return evaluation.run_benchmark(
        exp.rounds,
        exp.folds,
        report_models,
        strategies,
        exp.store,
        evaluation.PopulationConfig(population_size=budget.population_size, seed=derive_seed(seed, "population")),
        EnvConfig(alpha=budget.inference_alpha),
        derive_seed(seed, "evaluate"),
        None,
        inference_mode,
    )


@dataclass
class OrderingResult:
    means: dict

    @property
    def best_baseline(self) -> float:
        return max(self.means[s] for s in ("rf", "svm", "prev-perf", "sel-pct"))

    def checks(self, margin: float = 0.03) -> dict:
        m = self.means
        return {
            "ppo>=dqn": m["ppo"] >= m["dqn"],
            "dqn>=classifiers": m["dqn"] >= max(m["rf"], m["svm"]),
            "classifiers>=rankers": max(m["rf"], m["svm"]) >= max(m["prev-perf"], m["sel-pct"]),
            f"ppo-best_baseline>={margin}": m["ppo"] - self.best_baseline >= margin,
        }

    def passed(self, margin: float = 0.03) -> bool:
        return all(self.checks(margin).values())


def strategy_ordering(report) -> OrderingResult:
    strategies = dict.fromkeys(r.strategy for r in report.results)
    return OrderingResult({s: report.mean_over_folds(s) for s in strategies})


def density_shift(report, margin: float = 0.10) -> tuple[list[float], bool]:
    """Per fold: trained-PPO mean score ratio minus random-agent mean score ratio."""
    by = {(r.fold, r.strategy): r.mean_ratio for r in report.results}
    folds = sorted({f for f, _ in by})
    gaps = [by[(k, "ppo")] - by[(k, "random")] for k in folds]
    return gaps, all(g >= margin for g in gaps)


# --- alpha trade-off ---------------------------------------------------------------------------


@dataclass
class TradeoffResult:
    alphas: list
    goal_rates: list
    goal_rate_std: list
    cells: list = field(repr=False)

    def inversions(self) -> int:
        """Increases in goal rate between neighbouring alphas that exceed the fold noise."""
        n = 0
        for i in range(len(self.alphas) - 1):
            noise = self.goal_rate_std[i] + self.goal_rate_std[i + 1]
            if self.goal_rates[i + 1] - self.goal_rates[i] > noise:
                return len(self.alphas)  # a significant increase is never tolerated
            n += self.goal_rates[i + 1] > self.goal_rates[i]
        return n

    def passed(self) -> bool:
        return self.inversions() <= 1


def alpha_tradeoff(
    seed: int = 0, alphas: Sequence[float] = (0.7, 0.8, 0.9, 1.0), timesteps: int = 50_000, n_folds: int | None = None, exp=None
) -> TradeoffResult:
    """Goal-reach rate per training episode for a fresh PPO agent per (alpha, fold)."""
    exp = exp or synthetic_experiment(seed)
    folds = exp.folds if n_folds is None else exp.folds[:n_folds]
    cells, summary = evaluation.sweep_alpha(
        exp.rounds, folds, list(alphas), ppo.PpoConfig(total_timesteps=timesteps, seed=derive_seed(seed, "ppo")), EnvConfig(), seed
    )
    return TradeoffResult(
        [s["alpha"] for s in summary],
        [s["train_goal_rate_mean"] for s in summary],
        [s["train_goal_rate_std"] for s in summary],
        cells,
    )
