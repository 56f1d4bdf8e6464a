"""PPO episodic reward over training, smoothed over 500-episode windows.

    python3 scripts/training_curve.py --timesteps 200000 --out results/training_curve.csv
"""

import argparse
from pathlib import Path

import numpy as np

from teamswap import evaluation, experiments


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--timesteps", type=int, default=200_000)
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=500)
    p.add_argument("--out", type=Path, default=Path("results/training_curve.csv"))
    args = p.parse_args()

    res = experiments.ppo_training_trend(args.rounds, alpha=args.alpha, total_timesteps=args.timesteps, seed=args.seed, window=args.window)
    r = np.asarray(res.rewards)
    kernel = np.ones(args.window) / args.window
    smooth = np.convolve(r, kernel, mode="valid") if len(r) >= args.window else np.array([r.mean()])
    rows = [{"episode": i + args.window, "reward_mean": float(v)} for i, v in enumerate(smooth)][:: max(1, len(smooth) // 200)]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_csv(args.out, ["episode", "reward_mean"], rows)
    print(f"{res.episodes} episodes in {res.runtime:.0f} s; first {args.window}: {res.first:.2f}, last {args.window}: {res.last:.2f}")


if __name__ == "__main__":
    main()
