"""Goal-reach rate and validation score ratio against the goal threshold alpha.

    python3 scripts/alpha_sweep.py --timesteps 50000 --folds 2
"""

import argparse
from pathlib import Path

from teamswap import evaluation, experiments


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.7, 0.8, 0.9, 1.0])
    p.add_argument("--timesteps", type=int, default=50_000)
    p.add_argument("--folds", type=int, default=None, help="use only the first N folds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results/alpha_sweep.csv"))
    args = p.parse_args()

    res = experiments.alpha_tradeoff(args.seed, args.alphas, args.timesteps, args.folds)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_csv(args.out, evaluation.SWEEP_FIELDS, res.cells)
    for a, g, s in zip(res.alphas, res.goal_rates, res.goal_rate_std):
        acc = [c["accuracy"] for c in res.cells if c["alpha"] == a]
        print(f"alpha {a:.2f}: goal rate {g:.3f} +/- {s:.3f}, mean ratio {sum(acc) / len(acc):.3f}")
    print(f"inversions: {res.inversions()}")


if __name__ == "__main__":
    main()
