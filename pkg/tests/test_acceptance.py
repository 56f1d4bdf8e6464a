"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training-heavy criteria (5 to 8) take most of the runtime; the benchmark trains
PPO and DQN on four folds for three seeds.
"""

import dataclasses
import datetime as dt
import hashlib
import time

import numpy as np
import pytest

from teamswap import cli, dqn, evaluation, experiments, ppo
from teamswap.data import GeneratorConfig, HistoryStore, build_features, generate_history, temporal_cv_split
from teamswap.domain import PlayerRoundRecord, dream_team, team_score
from teamswap.env import EnvConfig, SwapEnv, minimal_swaps, random_team
from teamswap.nn import DenseNet, finite_difference_check, log_softmax

from conftest import random_round, record_criterion
from oracles import all_team_scores, bfs_swap_distance, greedy_action

BENCH_SEEDS = (0, 1, 2)
BENCH_BUDGET = experiments.Budget()  # 200k steps for both agents


def expect_reproduced(passed: bool, detail: str) -> None:
    """Training-based reproductions are reported as xfail when missed, not hidden.

    Property criteria assert directly; these depend on stochastic training runs, so a
    miss is recorded in the FAIL line and the summary while the suite stays usable.
    """
    if not passed:
        pytest.xfail(f"not reproduced: {detail}")


def test_criterion_01_dream_team_oracle():
    rng = np.random.default_rng(101)
    worst_time, failures = 0.0, 0
    for i in range(50):
        r = random_round(rng, f"R{i}")
        start = time.perf_counter()
        best = all_team_scores(r.normalized_points).max()
        ok = abs(team_score(dream_team(r), r) - best) <= 1e-12
        worst_time = max(worst_time, time.perf_counter() - start)
        failures += not ok
    passed = failures == 0 and worst_time < 5.0
    record_criterion(1, "dream team is the exhaustive optimum", passed, f"{50 - failures}/50 rounds match; slowest round {worst_time:.2f} s")
    assert passed


def test_criterion_02_ideal_policy_arithmetic():
    rng = np.random.default_rng(202)
    bad_steps = bad_reward = bad_bfs = checked_bfs = 0
    for trial in range(1000):
        r = random_round(rng, f"R{trial}")
        start = random_team(rng)
        goal = dream_team(r)
        n = 11 - len(set(start.selected) & set(goal.selected))
        if trial < 100:
            checked_bfs += 1
            bad_bfs += bfs_swap_distance(start.selected, goal.selected) != n or minimal_swaps(start, goal.selected) != n
        env = SwapEnv(EnvConfig(alpha=1.0))
        env.reset(r, start=start)
        total, steps = 0.0, 0
        while not env.done and not env.is_goal(env.score):
            total += env.step(greedy_action(env.state, r)).reward
            steps += 1
        bad_steps += steps != n
        if n > 0:
            bad_reward += not (total == 10 - (n - 1) and total >= 0)
    passed = bad_steps == bad_reward == bad_bfs == 0
    detail = f"step mismatches {bad_steps}/1000, reward mismatches {bad_reward}/1000, BFS mismatches {bad_bfs}/{checked_bfs}"
    record_criterion(2, "greedy swap oracle episode arithmetic", passed, detail)
    assert passed


def _ppo_loss_case(seed):
    rng = np.random.default_rng(seed)
    spec = ppo.actor_critic_spec(trunk=(8, 12, 16), policy=(16, 12, 5), value=(16, 1), activation="tanh")
    model = ppo.ActorCritic(spec, rng=rng)
    B = 16
    obs = rng.normal(size=(B, 8))
    actions = rng.integers(0, 5, B)
    old = log_softmax(model.forward(obs)[0])[np.arange(B), actions] + rng.normal(scale=0.3, size=B)
    args = (obs, actions, old, rng.normal(size=B), rng.normal(size=B), ppo.PpoConfig(n_envs=1, rollout_length=16, batch_size=16))
    _, grads, _ = ppo.ppo_loss(model, *args)
    return finite_difference_check(lambda: ppo.ppo_loss(model, *args)[0], model.params, grads, n_probes=100, rng=seed)


def _td_loss_case(seed):
    rng = np.random.default_rng(seed)
    online = DenseNet([12, 16, 8], "relu", "linear", rng=rng)
    target = DenseNet([12, 16, 8], "relu", "linear", rng=rng)
    n = 16
    batch = dqn.Batch(rng.normal(size=(n, 12)), rng.integers(0, 8, n), rng.normal(size=n), rng.normal(size=(n, 12)), (rng.random(n) < 0.3).astype(float))
    _, grads = dqn.td_loss(batch, online, target, 0.99)
    return finite_difference_check(lambda: dqn.td_loss(batch, online, target, 0.99)[0], online.params, grads, n_probes=100, rng=seed)


def test_criterion_03_gradient_correctness():
    ppo_reports = [_ppo_loss_case(s) for s in range(5)]
    td_reports = [_td_loss_case(s) for s in range(5)]
    worst_ppo = max(r.max_rel_error for r in ppo_reports)
    worst_td = max(r.max_rel_error for r in td_reports)
    passed = all(r.passed for r in ppo_reports + td_reports)
    detail = f"worst relative error PPO {worst_ppo:.1e}, TD {worst_td:.1e} (5 nets x 100 probes each, tolerance 1e-4)"
    record_criterion(3, "analytic vs finite-difference gradients", passed, detail)
    assert passed


def test_criterion_04_dqn_mechanics(small_rounds):
    notes, ok = [], True
    cfg = dqn.DqnConfig(total_timesteps=200_000)
    eps_ok = dqn.epsilon_at(0, cfg) == 1.0 and abs(dqn.epsilon_at(20_000, cfg) - 0.02) <= 1e-12
    ok &= eps_ok
    notes.append(f"epsilon(0)={dqn.epsilon_at(0, cfg)}, epsilon(0.1T)={dqn.epsilon_at(20_000, cfg):.15f}")

    buf = dqn.ReplayBuffer(10_000, obs_dim=1)
    for i in range(10_500):
        buf.add([i], 0, float(i), [i], False)
    fifo_ok = len(buf) == 10_000 and set(buf.rewards.astype(int)) == set(range(500, 10_500))
    ok &= fifo_ok
    notes.append(f"buffer size {len(buf)} after 10500 inserts, oldest kept {int(buf.rewards.min())}")

    spec = {"layer_dims": [243, 16, 121], "activation": "relu", "output_activation": "linear"}
    rounds = small_rounds[30:60]
    agent = dqn.DqnAgent.create(dqn.DqnConfig(total_timesteps=12_000, batch_size=8, seed=2), EnvConfig(), spec)
    changes, previous = [], agent.target.flat().copy()
    for stop in range(1000, 12_001, 1000):
        agent, _, _ = dqn.train(rounds, dqn.DqnConfig(total_timesteps=stop, batch_size=8, seed=2), EnvConfig(), agent)
        now = agent.target.flat()
        if not np.array_equal(now, previous):
            changes.append(stop)
        previous = now.copy()
    sync_ok = changes == [5000, 10_000] and agent.target_syncs == [5000, 10_000]
    ok &= sync_ok
    notes.append(f"target changed in windows ending at {changes}")
    record_criterion(4, "DQN target sync, replay FIFO, epsilon schedule", bool(ok), "; ".join(notes))
    assert ok


def test_criterion_05_ppo_training_trend():
    res = experiments.ppo_training_trend()
    passed = res.passed()
    detail = f"first-500 mean {res.first:.2f}, last-500 mean {res.last:.2f} (gain {res.gain:.2f}), {res.episodes} episodes, {res.runtime:.0f} s"
    record_criterion(5, "PPO reward trend over 200k steps", passed, detail)
    expect_reproduced(passed, detail)


@pytest.fixture(scope="module")
def benchmarks():
    """Benchmark reports per seed, computed on first use."""
    cache = {}

    def get(seed):
        if seed not in cache:
            exp = experiments.synthetic_experiment(seed)
            report, models = experiments.benchmark(seed, BENCH_BUDGET, exp=exp)
            cache[seed] = (exp, report, models)
        return cache[seed]

    return get


def test_criterion_06_density_shift(benchmarks):
    _, report, _ = benchmarks(0)
    gaps, passed = experiments.density_shift(report, 0.10)
    detail = "PPO minus random mean ratio per fold: " + ", ".join(f"{g:+.3f}" for g in gaps)
    record_criterion(6, "trained PPO shifts score ratios above random", passed, detail)
    expect_reproduced(passed, detail)


def test_criterion_07_strategy_ordering(benchmarks):
    verdicts, lines = [], []
    for seed in BENCH_SEEDS:
        exp, report, models = benchmarks(seed)
        result = experiments.strategy_ordering(report)
        verdicts.append(result.passed())
        m = result.means
        argmax = experiments.rescore(models, exp, seed, BENCH_BUDGET, "deterministic")
        lines.append(
            f"seed {seed}: " + " ".join(f"{s}={m[s]:.3f}" for s in evaluation.STRATEGIES)
            + f" [argmax rollouts: ppo={argmax.mean_over_folds('ppo'):.3f} dqn={argmax.mean_over_folds('dqn'):.3f}]"
            + ("" if verdicts[-1] else f" failed {[k for k, v in result.checks().items() if not v]}")
        )
    passed = all(verdicts)
    detail = " | ".join(lines)
    record_criterion(7, "PPO >= DQN >= classifiers >= rankers, PPO margin 0.03", passed, detail)
    expect_reproduced(passed, detail)


def test_criterion_08_alpha_tradeoff():
    res = experiments.alpha_tradeoff(seed=0, timesteps=50_000)
    passed = res.passed()
    detail = ", ".join(f"alpha {a:.1f}: {g:.3f}+/-{s:.3f}" for a, g, s in zip(res.alphas, res.goal_rates, res.goal_rate_std))
    record_criterion(8, "goal-reach rate non-increasing in alpha", passed, f"{detail}; inversions {res.inversions()}")
    expect_reproduced(passed, detail)


def _future_perturbed(store, cutoff, rng):
    """Copy of ``store`` with every record dated on or after ``cutoff`` rewritten, dropped or added."""
    recs = []
    for r in store.records:
        if r.date < cutoff:
            recs.append(r)
        elif rng.random() < 0.8:
            recs.append(dataclasses.replace(r, raw_points=float(rng.normal(30, 40)), selection_pct=float(rng.random())))
    players = sorted({r.player for r in store.records})
    for j in range(int(rng.integers(1, 30))):
        day = cutoff + dt.timedelta(days=int(rng.integers(0, 60)))
        recs.append(PlayerRoundRecord(players[int(rng.integers(len(players)))], f"X{j}", day, float(rng.normal(50, 30)), 0.5))
    return HistoryStore(recs)


def _gap_ok(folds, dates_by_id, gap):
    for f in folds:
        if set(f.train_rounds) & set(f.validation_rounds):
            return False
        if max(dates_by_id[r] for r in f.train_rounds) + dt.timedelta(days=gap) >= min(dates_by_id[r] for r in f.validation_rounds):
            return False
    return all(set(a.train_rounds) < set(b.train_rounds) for a, b in zip(folds, folds[1:]))


def test_criterion_09_no_leakage_and_splits():
    rng = np.random.default_rng(909)
    stores = [generate_history(GeneratorConfig(n_rounds=80, seed=s)) for s in range(5)]
    leaks = control = 0
    for _ in range(1000):
        store = stores[int(rng.integers(len(stores)))]
        rid, date, players = store.rounds()[int(rng.integers(5, 80))]
        perturbed = _future_perturbed(store, date, rng)
        leaks += not np.array_equal(build_features(store, players, date), build_features(perturbed, players, date))
        # control: one day later the perturbed records are history and must show up
        later = date + dt.timedelta(days=1)
        control += not np.array_equal(build_features(store, players, later), build_features(perturbed, players, later))

    gap_failures, n_checked = 0, 0
    for _ in range(1000):
        n = int(rng.integers(30, 300))
        steps = rng.integers(1, 5, n)
        dates = [dt.date(2020, 1, 1) + dt.timedelta(days=int(d)) for d in np.cumsum(steps)]
        ids = [f"r{i}" for i in range(n)]
        n_folds, gap = int(rng.integers(2, 7)), int(rng.integers(0, 15))
        try:
            folds = temporal_cv_split(ids, dates, n_folds, gap)
        except ValueError:
            continue
        n_checked += 1
        gap_failures += not _gap_ok(folds, dict(zip(ids, dates)), gap)
    for seed in BENCH_SEEDS:
        exp = experiments.synthetic_experiment(seed)
        n_checked += 1
        gap_failures += not _gap_ok(exp.folds, {r.round_id: r.date for r in exp.rounds}, 7)
    passed = leaks == 0 and control > 900 and gap_failures == 0 and n_checked > 500
    detail = (
        f"features changed by future records in {leaks}/1000 trials (control with the cutoff moved one day: {control}/1000); "
        f"gap violations {gap_failures}/{n_checked} fold sets"
    )
    record_criterion(9, "no leakage from future records, temporal gap holds", passed, detail)
    assert passed


DETERMINISM_INI = """\
[run]
seed = 11
n_folds = 2
burn_in_rounds = 10
alphas = 0.7,1.0
sweep_timesteps = 256

[generator]
n_rounds = 60

[ppo]
n_envs = 2
rollout_length = 32
batch_size = 32
n_epochs = 2
total_timesteps = 256

[dqn]
total_timesteps = 600
batch_size = 32

[forest]
n_trees = 10

[population]
population_size = 500
"""


def _pipeline(workdir, monkeypatch):
    workdir.mkdir()
    (workdir / "run.ini").write_text(DETERMINISM_INI)
    monkeypatch.chdir(workdir)
    steps = [["gen-data"], ["train", "ppo"], ["train", "dqn"], ["baselines"], ["evaluate"], ["sweep-alpha"], ["report"]]
    for args in steps:
        assert cli.main([*args, "--config", "run.ini", "--sequential"]) == 0, args
    return {
        str(p.relative_to(workdir)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(workdir.rglob("*"))
        if p.is_file() and p.name != "run.ini"
    }


def test_criterion_10_determinism(tmp_path, monkeypatch):
    first = _pipeline(tmp_path / "a", monkeypatch)
    second = _pipeline(tmp_path / "b", monkeypatch)
    kinds = {k: sum(1 for f in first if f.startswith(k)) for k in ("data/", "checkpoints/", "reports/")}
    differing = sorted(f for f in first if first[f] != second.get(f))
    passed = first.keys() == second.keys() and not differing and all(kinds.values())
    detail = f"{len(first)} files compared ({kinds['data/']} data, {kinds['checkpoints/']} checkpoints/logs, {kinds['reports/']} reports); differing: {differing or 'none'}"
    record_criterion(10, "sequential pipeline is byte-identical across runs", passed, detail)
    assert passed
