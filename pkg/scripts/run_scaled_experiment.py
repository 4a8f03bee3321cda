"""Scaled experiment on the bundled sample photographs.

Trains with the default configuration on 10 pristine photographs, builds the
natural model from 5 of them, distorts 6 held-out photographs into a 96-image
benchmark, scores it and prints the correlation report together with the mean
score per level for each family.

    python3 scripts/run_scaled_experiment.py --out runs/scaled
    python3 scripts/run_scaled_experiment.py --out runs/quick --set epochs=3
"""

import argparse
import sys
from pathlib import Path

from biq.distortions import FAMILIES
from biq.experiment import run_pipeline


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/scaled", help="working directory for all artifacts")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    parser.add_argument("--seed", type=int, default=0, help="distortion seed")
    args = parser.parse_args()

    run = run_pipeline(Path(args.out), args.set, seed=args.seed)
    report = run.evaluation()
    ckpt = run.training()
    print()
    print(f"training loss: first epoch {ckpt.loss_history[0]:.6f}, last epoch {ckpt.loss_history[-1]:.6f}")
    for fam in FAMILIES:
        means = " ".join(f"{v:.5f}" for v in report.mean_scores_by_level(fam))
        print(f"mean score by level, {fam:<11}: {means}")
    print("wall clock: " + ", ".join(f"{k} {v:.1f}s" for k, v in run.seconds.items()) + f" (total {run.total_seconds:.1f}s)")
    print(f"artifacts in {run.root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
