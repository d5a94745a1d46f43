"""
Attacking and defending a trained controller
============================================

Starting from a nominal checkpoint (see ``02_nominal_controller.py``), this
trains an attacker that adds its own command to the nominal one, then a
defender that adds a third command to undo the damage.  Both earlier layers
stay frozen.  The five suite scenarios are then flown and compared.

    python demos/03_attack_and_defense.py --nominal runs/demo/nominal/checkpoint.bin
"""

# %%
import argparse
import json
import logging
from pathlib import Path

from quadsec import evaluation as ev
from quadsec import training

parser = argparse.ArgumentParser()
parser.add_argument("--nominal", required=True)
parser.add_argument("--iterations", type=int, default=150)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--repeats", type=int, default=20)
parser.add_argument("--output", default="runs/demo")
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
out = Path(args.output)

# %%
# The attacker is rewarded for pushing the vehicle away from its hover point
# and pays a small price for its own effort.
base = {"seed": args.seed, "iterations": args.iterations, "frozen.nominal": args.nominal}
attacker = training.train(training.profile_config("desk", "attacker", base), out / "attacker")

# %%
# The defender sees the same observation and is rewarded for the opposite.
# During training the attack starts at a random time in the first two
# seconds and is sometimes replaced by random noise.
base["frozen.attacker"] = str(attacker.checkpoint)
defender = training.train(training.profile_config("desk", "defender", base), out / "defender")

# %%
# Every scenario flies the same seeded episodes; the attack starts at 2 s.
layers = {"nominal": args.nominal, "attacker": attacker.checkpoint, "defender": defender.checkpoint}
suite = ev.ExperimentSuite(repeats=args.repeats)
result = ev.run_suite(suite, layers, seed=args.seed, output_dir=out / "suite")
for scenario, rows in result.summary.items():
    o = ev.overall(rows)
    print(f"{scenario:15s} crash rate {o['crash_rate']:.2f}, mean final distance {o['mean_final_dist_m']:.2f} m")

# %%
report = ev.compare_scenarios(result.summary)
print(json.dumps({k: v["overall"] for k, v in report.items()}, indent=2))
