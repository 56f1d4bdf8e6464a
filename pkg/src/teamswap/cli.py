"""Command-line interface.

    teamswap gen-data
    teamswap baselines
    teamswap train ppo --total-timesteps 50000
    teamswap evaluate
    teamswap sweep-alpha --alphas 0.7,0.8,0.9,1.0
    teamswap report

Settings come from an INI file (``--config`` or ``$TEAMSWAP_CONFIG``), then
``--set section.key=value`` overrides, then the per-key flags listed in ``--help``.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, dqn, evaluation, ppo
from .config import CONFIG_ENV_VAR, SECTIONS, ConfigError, RunConfig, field_types, load_config, parse_assignment
from .data import CvFold, build_rounds, generate_history, load_dataset, temporal_cv_split, write_history_csv, write_rounds_manifest
from .env import EnvConfig
from .seeding import derive_seed

log = logging.getLogger("teamswap")

AGENTS = ("dqn", "ppo")
LOG_FIELDS = {"dqn": dqn.LOG_FIELDS, "ppo": ppo.LOG_FIELDS}
UNPREFIXED = ("run", "paths")


class CommandError(RuntimeError):
    pass


# --- parser ----------------------------------------------------------------------------------


def _flag(section: str, key: str) -> str:
    name = key.replace("_", "-")
    return f"--{name}" if section in UNPREFIXED else f"--{section}-{name}"


def _config_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    g = parent.add_argument_group("general")
    g.add_argument("--config", metavar="PATH", help=f"INI config file (default: ${CONFIG_ENV_VAR} if set)")
    g.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config key; repeatable")
    g.add_argument("--sequential", action="store_true", help="limit numeric libraries to one thread for bit-exact reruns")
    g.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    defaults = RunConfig()
    for section, cls in SECTIONS.items():
        group = parent.add_argument_group(f"[{section}] keys")
        current = getattr(defaults, section)
        for key, tp in field_types(cls).items():
            shown = "derived from [run] seed" if key == "seed" and section != "run" else getattr(current, key)
            group.add_argument(_flag(section, key), dest=f"cfg:{section}.{key}", metavar="V", help=f"{section}.{key} (default: {shown})")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _config_options()
    parser = argparse.ArgumentParser(prog="teamswap", description="Fantasy team selection with swap-based reinforcement learning.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("gen-data", parents=[common], help="write a synthetic history CSV and rounds manifest")

    p = sub.add_parser("train", parents=[common], help="train an RL agent on each fold's training rounds")
    p.add_argument("agent", choices=AGENTS)
    p.add_argument("--fold", type=int, action="append", help="fold index to train (repeatable; default all)")
    p.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    shared = sorted((set(field_types(dqn.DqnConfig)) | set(field_types(ppo.PpoConfig))) - {"seed"})
    g = p.add_argument_group("agent keys (applied to the chosen agent's section)")
    for key in shared:
        g.add_argument(f"--{key.replace('_', '-')}", dest=f"agent:{key}", metavar="V", help=argparse.SUPPRESS)

    p = sub.add_parser("baselines", parents=[common], help="fit the random-forest and SVM baselines per fold")
    p.add_argument("--which", default="rf,svm", help="comma-separated subset of rf,svm (default: rf,svm)")

    sub.add_parser("evaluate", parents=[common], help="benchmark every strategy against the simulated population")
    sub.add_parser("sweep-alpha", parents=[common], help="train fresh PPO agents per alpha and fold under a fixed budget")
    sub.add_parser("report", parents=[common], help="summarize evaluation and sweep outputs as markdown")
    return parser


def resolve_config(args) -> RunConfig:
    overrides: dict[str, dict[str, str]] = {}
    for text in args.set:
        s, k, v = parse_assignment(text)
        overrides.setdefault(s, {})[k] = v
    for dest, value in vars(args).items():
        if value is None:
            continue
        if dest.startswith("cfg:"):
            s, k = dest[4:].split(".", 1)
        elif dest.startswith("agent:"):
            s, k = args.agent, dest[6:]
            if k not in field_types(SECTIONS[s]):
                raise ConfigError(f"unknown config key '{s}.{k}' (option --{k.replace('_', '-')} does not apply to {s})")
        else:
            continue
        overrides.setdefault(s, {})[k] = value
    return load_config(args.config, overrides)


# --- shared helpers ----------------------------------------------------------------------------


def experiment(cfg: RunConfig):
    """(store, usable rounds, folds) from the data directory."""
    try:
        store, rounds = load_dataset(cfg.data_dir)
    except FileNotFoundError as exc:
        raise CommandError(f"{exc}; run 'teamswap gen-data' first") from None
    usable = rounds[cfg.run.burn_in_rounds :]
    folds = temporal_cv_split([r.round_id for r in usable], [r.date for r in usable], cfg.run.n_folds, cfg.run.gap_days)
    return store, usable, folds


def fold_indices(requested, n_folds: int) -> list[int]:
    if not requested:
        return list(range(n_folds))
    for k in requested:
        if not 0 <= k < n_folds:
            raise ConfigError(f"fold {k} out of range 0..{n_folds - 1}")
    return sorted(set(requested))


def agent_config(cfg: RunConfig, agent: str, fold: int):
    base = getattr(cfg, agent)
    return dataclasses.replace(base, seed=derive_seed(base.seed, "fold", fold))


def checkpoint_path(cfg: RunConfig, name: str, fold: int, suffix: str) -> Path:
    return cfg.checkpoint_dir / f"{name}_fold{fold}{suffix}"


def inference_env(cfg: RunConfig) -> EnvConfig:
    return dataclasses.replace(cfg.env, alpha=cfg.run.inference_alpha)


def write_log(path: Path, fields, rows, header: dict) -> None:
    """CSV log preceded by ``# key = value`` lines echoing the configuration."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for k, v in header.items():
            fh.write(f"# {k} = {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([repr(row[f]) if isinstance(row[f], float) else row[f] for f in fields])


def read_log(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _header(section: str, config, env: EnvConfig, fold: int) -> dict:
    out = {f"{section}.{k}": v for k, v in dataclasses.asdict(config).items()}
    out.update({f"env.{k}": v for k, v in dataclasses.asdict(env).items()})
    out["fold"] = fold
    return out


def load_agent(path: Path, strategy: str):
    if not path.exists():
        raise LookupError(f"missing model checkpoint for strategy '{strategy}': {path}")
    if strategy == "ppo":
        return ppo.PpoAgent.load(path)
    if strategy == "dqn":
        return dqn.DqnAgent.load(path)
    return baselines.load_model(path)


# --- commands --------------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, args) -> None:
    store = generate_history(cfg.generator)
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    write_history_csv(store, cfg.data_dir / "history.csv")
    write_rounds_manifest(store, cfg.data_dir / "rounds.csv")
    n_rounds = len(store.rounds())
    print(f"wrote {len(store.records)} player-round records over {n_rounds} rounds to {cfg.data_dir}")


def cmd_train(cfg: RunConfig, args) -> None:
    _, rounds, folds = experiment(cfg)
    cfg.checkpoint_dir.mkdir(parents=True, exist_ok=True)
    by_id = {r.round_id: r for r in rounds}
    module = {"ppo": ppo, "dqn": dqn}[args.agent]
    agent_cls = {"ppo": ppo.PpoAgent, "dqn": dqn.DqnAgent}[args.agent]
    for k in fold_indices(args.fold, len(folds)):
        acfg = agent_config(cfg, args.agent, k)
        ckpt = checkpoint_path(cfg, args.agent, k, ".ckpt")
        log_path = checkpoint_path(cfg, args.agent, k, "_log.csv")
        agent, rows = None, []
        if args.resume and ckpt.exists():
            agent = agent_cls.load(ckpt)
            if log_path.exists():
                rows = [{f: _num(v) for f, v in r.items()} for r in read_log(log_path)]
            if agent.timesteps >= acfg.total_timesteps:
                print(f"fold {k}: checkpoint already at {agent.timesteps} steps; nothing to do")
                continue
        train_rounds = [by_id[i] for i in folds[k].train_rounds]
        agent, new_rows, stats = module.train(train_rounds, acfg, cfg.env, agent)
        rows += new_rows
        agent.save(ckpt)
        write_log(log_path, LOG_FIELDS[args.agent], rows, _header(args.agent, acfg, cfg.env, k))
        rewards = stats.rewards[-500:]
        print(f"fold {k}: {args.agent} trained to {agent.timesteps} steps; mean reward of last {len(rewards)} episodes {np.mean(rewards):.2f}; {ckpt}")


def _num(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def cmd_baselines(cfg: RunConfig, args) -> None:
    which = [w.strip() for w in args.which.split(",") if w.strip()]
    bad = set(which) - {"rf", "svm"}
    if bad:
        raise ConfigError(f"unknown baseline(s) {sorted(bad)}; choose from rf, svm")
    _, rounds, folds = experiment(cfg)
    cfg.checkpoint_dir.mkdir(parents=True, exist_ok=True)
    for k, fold in enumerate(folds):
        train_r, _ = evaluation.split_rounds(rounds, fold)
        X, y = baselines.labelled_players(train_r)
        if "rf" in which:
            fcfg = dataclasses.replace(cfg.forest, seed=derive_seed(cfg.forest.seed, "fold", k))
            if cfg.run.grid_search:
                fcfg = baselines.grid_search_forest(train_r, base=fcfg)
            path = checkpoint_path(cfg, "rf", k, ".json")
            baselines.save_model(baselines.train_forest(X, y, fcfg), path)
            print(f"fold {k}: random forest ({fcfg.n_trees} trees, depth {fcfg.max_depth}) -> {path}")
        if "svm" in which:
            scfg = dataclasses.replace(cfg.svm, seed=derive_seed(cfg.svm.seed, "fold", k))
            if cfg.run.grid_search:
                scfg = baselines.grid_search_svm(train_r, base=scfg)
            path = checkpoint_path(cfg, "svm", k, ".json")
            baselines.save_model(baselines.train_svm(X, y, scfg), path)
            print(f"fold {k}: RBF SVM (C={scfg.C}) -> {path}")


def fold_models(cfg: RunConfig, strategies, n_folds: int):
    """(trained, untrained) FoldModels per fold; untrained agents share the trained agents' init seeds."""
    trained, untrained = [], []
    names = {"ppo": ("ppo", ".ckpt"), "dqn": ("dqn", ".ckpt"), "rf": ("rf", ".json"), "svm": ("svm", ".json")}
    attrs = {"ppo": "ppo", "dqn": "dqn", "rf": "forest", "svm": "svm"}
    for k in range(n_folds):
        m, u = evaluation.FoldModels(), evaluation.FoldModels()
        for s in strategies:
            if s not in names:
                continue
            name, suffix = names[s]
            setattr(m, attrs[s], load_agent(checkpoint_path(cfg, name, k, suffix), s))
            if s == "ppo":
                u.ppo = ppo.PpoAgent.create(m.ppo.config, m.ppo.env_config)
            elif s == "dqn":
                u.dqn = dqn.DqnAgent.create(m.dqn.config, m.dqn.env_config)
        trained.append(m)
        untrained.append(u)
    return trained, untrained


def cmd_evaluate(cfg: RunConfig, args) -> None:
    store, rounds, folds = experiment(cfg)
    strategies = cfg.run.strategy_list
    trained, untrained = fold_models(cfg, strategies, len(folds))
    report = evaluation.run_benchmark(
        rounds,
        folds,
        trained,
        strategies,
        store,
        cfg.population,
        inference_env(cfg),
        derive_seed(cfg.run.seed, "evaluate"),
        untrained,
        cfg.run.inference_mode,
    )
    paths = report.write(cfg.report_dir)
    for s in strategies:
        print(f"{s:>9}: percentile {report.mean_over_folds(s):.3f}  ratio {report.mean_over_folds(s, 'mean_ratio'):.3f}")
    print(f"wrote {len(paths)} report files to {cfg.report_dir}")


def cmd_sweep_alpha(cfg: RunConfig, args) -> None:
    _, rounds, folds = experiment(cfg)
    pcfg = dataclasses.replace(cfg.ppo, total_timesteps=cfg.run.sweep_timesteps)
    cells, summary = evaluation.sweep_alpha(
        rounds, folds, cfg.run.alpha_list, pcfg, cfg.env, derive_seed(cfg.run.seed, "sweep"), inference_env(cfg), cfg.run.inference_mode
    )
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    evaluation.write_csv(cfg.report_dir / "alpha_sweep.csv", evaluation.SWEEP_FIELDS, cells)
    evaluation.write_csv(cfg.report_dir / "alpha_sweep_summary.csv", evaluation.SWEEP_SUMMARY_FIELDS, summary)
    for row in summary:
        print(
            f"alpha {row['alpha']:.2f}: accuracy {row['accuracy_mean']:.3f} +/- {row['accuracy_std']:.3f}, "
            f"goal rate {row['train_goal_rate_mean']:.3f} +/- {row['train_goal_rate_std']:.3f}"
        )


def render_report(report_dir: Path) -> str:
    rows = evaluation.read_csv(report_dir / "eval_report.csv")
    strategies = list(dict.fromkeys(r["strategy"] for r in rows))
    lines = ["# Benchmark summary", "", "| strategy | mean percentile | sd | mean ratio | goal rate |", "|---|---|---|---|---|"]
    means = {}
    for s in strategies:
        pct = np.array([float(r["mean_percentile"]) for r in rows if r["strategy"] == s])
        ratio = np.mean([float(r["mean_ratio"]) for r in rows if r["strategy"] == s])
        goal = np.mean([float(r["goal_rate"]) for r in rows if r["strategy"] == s])
        means[s] = pct.mean()
        lines.append(f"| {s} | {pct.mean():.3f} | {pct.std():.3f} | {ratio:.3f} | {goal:.3f} |")
    lines += ["", f"Folds: {len(set(r['fold'] for r in rows))}. Percentiles are against a simulated entrant population."]
    ordering = " > ".join(sorted(means, key=lambda s: -means[s]))
    lines += [f"Ordering by mean percentile: {ordering}.", ""]
    sweep = report_dir / "alpha_sweep_summary.csv"
    if sweep.exists():
        lines += ["## Alpha sweep", "", "| alpha | accuracy | sd | training goal rate | sd |", "|---|---|---|---|---|"]
        for r in evaluation.read_csv(sweep):
            lines.append(
                f"| {float(r['alpha']):.2f} | {float(r['accuracy_mean']):.3f} | {float(r['accuracy_std']):.3f} "
                f"| {float(r['train_goal_rate_mean']):.3f} | {float(r['train_goal_rate_std']):.3f} |"
            )
        lines.append("")
    return "\n".join(lines)


def cmd_report(cfg: RunConfig, args) -> None:
    if not (cfg.report_dir / "eval_report.csv").exists():
        raise CommandError(f"no evaluation report in {cfg.report_dir}; run 'teamswap evaluate' first")
    text = render_report(cfg.report_dir)
    (cfg.report_dir / "summary.md").write_text(text, encoding="utf-8")
    print(text)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "baselines": cmd_baselines,
    "evaluate": cmd_evaluate,
    "sweep-alpha": cmd_sweep_alpha,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        parser.exit(2, f"teamswap: error: {exc}\n")
    limiter = contextlib.nullcontext()
    if args.sequential:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=1)
    try:
        with limiter:
            COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        parser.exit(2, f"teamswap: error: {exc}\n")
    except (CommandError, LookupError, FileNotFoundError, ValueError) as exc:
        print(f"teamswap: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
