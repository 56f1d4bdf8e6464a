"""Strategy benchmark on synthetic data, one report directory per seed.

    python3 scripts/benchmark.py --seeds 0 1 2 --ppo-timesteps 200000 --dqn-timesteps 200000
"""

import argparse
import json
import logging
import time
from pathlib import Path

from teamswap import evaluation, experiments


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--ppo-timesteps", type=int, default=200_000)
    p.add_argument("--dqn-timesteps", type=int, default=200_000)
    p.add_argument("--inference-mode", choices=evaluation.INFERENCE_MODES, default="stochastic")
    p.add_argument("--population-size", type=int, default=10_000)
    p.add_argument("--out", type=Path, default=Path("results/benchmark"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    budget = experiments.Budget(
        ppo_timesteps=args.ppo_timesteps,
        dqn_timesteps=args.dqn_timesteps,
        inference_mode=args.inference_mode,
        population_size=args.population_size,
    )
    summary = {}
    for seed in args.seeds:
        start = time.perf_counter()
        report, _ = experiments.benchmark(seed, budget)
        report.write(args.out / f"seed{seed}")
        result = experiments.strategy_ordering(report)
        density, _ = experiments.density_shift(report)
        summary[seed] = {"means": result.means, "checks": result.checks(), "density_gaps": density, "seconds": time.perf_counter() - start}
        print(f"seed {seed}: " + " ".join(f"{s}={v:.3f}" for s, v in result.means.items()), "ordering ok" if result.passed() else "ordering violated")
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
