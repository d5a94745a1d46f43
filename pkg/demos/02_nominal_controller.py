"""
Training the nominal hover controller
=====================================

Trains the nominal layer with the desk profile, then flies it from the fixed
spawn (0, 0, 0.5) to each of the six hover points and prints where it ended
up.  A full desk run takes a few minutes on one core; pass a smaller
iteration count to get a quick (and poor) controller.

    python demos/02_nominal_controller.py --iterations 150 --seed 0
"""

# %%
import argparse
import logging
from pathlib import Path

from quadsec import evaluation as ev
from quadsec import training

parser = argparse.ArgumentParser()
parser.add_argument("--iterations", type=int, default=150)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--output", default="runs/demo")
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

# %%
# The desk profile collects 4 x 2048 steps per iteration and evaluates the
# mean action every 10 iterations; the best evaluation is kept.
config = training.profile_config("desk", "nominal", {"seed": args.seed, "iterations": args.iterations})
result = training.train(config, Path(args.output) / "nominal")
print(f"best iteration {result.best_iteration}, checkpoint {result.checkpoint}")

# %%
# Deterministic flights to the six hover points.  Nothing here is random,
# so one repeat per point is enough.
suite = ev.ExperimentSuite(repeats=1, scenarios=("nominal",))
flown = ev.run_suite(suite, {"nominal": result.checkpoint}, seed=args.seed)
for key, row in flown.summary["nominal"].items():
    settle = row["mean_settling_s"]
    print(f"hover {key:>14s}: final distance {row['mean_final_dist_m']:.3f} m, settling {settle if settle is None else round(settle, 2)} s")
