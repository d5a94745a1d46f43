"""Command-line entry point: ``quadsec {train,eval,grid,suite,inspect}``.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime failures.
Output goes under ``--output`` or, by default, ``$QUADSEC_OUTPUT`` (``runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, nn, training

log = logging.getLogger("quadsec")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _config_help() -> str:
    lines = ["config keys (dotted, with defaults):"]
    for key, value in training.flatten(training.RunConfig().to_dict()).items():
        lines.append(f"  {key} = {json.dumps(value)}")
    return "\n".join(lines)


def _parse_sets(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise training.ConfigError(f"override {pair!r} is not key=value")
        out[key.strip()] = value
    return out


def _output_root() -> Path:
    return Path(os.environ.get("QUADSEC_OUTPUT", "runs"))


def _resolve_config(args) -> training.RunConfig:
    overrides = _parse_sets(args.set)
    overrides["seed"] = args.seed
    if getattr(args, "nominal", None):
        overrides["frozen.nominal"] = args.nominal
    if getattr(args, "attacker", None):
        overrides["frozen.attacker"] = args.attacker
    if args.config:
        config = training.load_config(args.config, {"role": args.role, **overrides})
    else:
        config = training.profile_config(args.profile, args.role, overrides)
    return config


def cmd_train(args) -> int:
    config = _resolve_config(args)
    out = Path(args.output or _output_root() / f"train-{config.role}-seed{config.seed}")
    result = training.train(config, out)
    print(f"checkpoint {result.checkpoint} sha256 {result.sha256}")
    print(f"best iteration {result.best_iteration} of {result.iterations}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise training.ConfigError("missing required key 'checkpoint' (--checkpoint PATH)")
    if not Path(args.checkpoint).is_file():
        raise training.ConfigError(f"checkpoint not found: {args.checkpoint}")
    config = _resolve_config(args)
    config.check_frozen()
    layers = training.frozen_layers(config)
    result = training.evaluate_policy(
        args.checkpoint, config.env, args.episodes, args.seed, weights=config.reward, layers=layers
    )
    out = Path(args.output or _output_root() / f"eval-{config.role}-seed{args.seed}")
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "mean_reward": result.mean,
        "std_reward": result.std,
        "crash_rate": result.crash_rate,
        "episodes": [
            {"crashed": o.crashed, "steps": o.steps, "final_distance": o.final_distance, "reward": o.total_reward}
            for o in result.outcomes
        ],
    }
    (out / "eval.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    training.write_manifest(out / "manifest.json", config, {"policy": training.file_sha256(args.checkpoint)})
    print(f"mean reward {result.mean:.3f} +- {result.std:.3f}, crash rate {result.crash_rate:.2f}")
    return EXIT_OK


def cmd_grid(args) -> int:
    base = _resolve_config(args)
    if args.values:
        values = {k: training.parse_value(v) for k, v in _parse_sets(args.values).items()}
        grid = training.GridSpec(base.role, {k: v if isinstance(v, list) else [v] for k, v in values.items()})
    else:
        grid = training.PAPER_GRIDS["nominal" if base.role == "nominal" else "adversarial"]
        grid = training.GridSpec(base.role, grid.values)
    print(f"{len(grid.combinations())} combinations")
    out = Path(args.output or _output_root() / f"grid-{base.role}-seed{base.seed}")
    ranking = training.grid_search(grid, base, out, args.iterations)
    training.write_manifest(out / "manifest.json", base, {"ranking.csv": training.file_sha256(ranking)}, {"grid": grid.values})
    print(f"ranking {ranking}")
    return EXIT_OK


def cmd_suite(args) -> int:
    scenarios = tuple(evaluation.SCENARIOS) if args.scenario == "all" else tuple(args.scenario.split(","))
    checkpoints = {k: getattr(args, k) for k in ("nominal", "attacker", "defender") if getattr(args, k)}
    if "nominal" not in checkpoints:
        raise training.ConfigError("missing required key 'nominal' (--nominal PATH)")
    for role, path in checkpoints.items():
        if not Path(path).is_file():
            raise training.ConfigError(f"{role} checkpoint not found: {path}")
    suite = evaluation.ExperimentSuite(repeats=args.repeats, scenarios=scenarios)
    out = Path(args.output or _output_root() / f"suite-seed{args.seed}")
    result = evaluation.run_suite(suite, checkpoints, args.seed, out, write_trajectories=not args.no_trajectories)
    comparison = evaluation.compare_scenarios(result.summary) if len(result.summary) >= 2 else {}
    (out / "comparison.json").write_text(json.dumps(comparison, indent=2, sort_keys=True) + "\n")
    hashes = {role: training.file_sha256(path) for role, path in checkpoints.items()}
    hashes["summary.json"] = training.file_sha256(out / "summary.json")
    training.write_manifest(out / "manifest.json", None, hashes, {"seed": args.seed, "scenarios": list(scenarios), "skipped": result.skipped})
    for scenario, rows in result.summary.items():
        o = evaluation.overall(rows)
        print(f"{scenario:15s} crash rate {o['crash_rate']:.2f}  mean final distance {o['mean_final_dist_m']:.3f} m")
    return EXIT_OK


def cmd_inspect(args) -> int:
    ckpt = nn.load_checkpoint(args.checkpoint)
    spec = ckpt.params.spec
    print(f"input_dim {spec.input_dim}")
    print(f"hidden {list(spec.hidden)}")
    print(f"action_dim {spec.action_dim}")
    print(f"parameters {spec.param_count}")
    print(f"log_std {np.array2string(ckpt.params.log_std, precision=4)}")
    print(f"seed {ckpt.seed}")
    print(f"sha256 {ckpt.sha256}")
    for key, value in sorted(ckpt.meta.items()):
        print(f"meta.{key} {value}")
    manifest = Path(args.checkpoint).with_name("manifest.json")
    if manifest.is_file():
        data = json.loads(manifest.read_text())
        for key in ("iterations", "best_iteration"):
            if key in data:
                print(f"manifest.{key} {data[key]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadsec",
        description="Train and evaluate nominal, attacker and defender quadrotor controllers.",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p, role=True):
        p.add_argument("--config", help="YAML run config; --set overrides apply on top")
        p.add_argument("--profile", default="desk", choices=sorted(training.PROFILES))
        if role:
            p.add_argument("--role", default="nominal", choices=list(training.ROLE_SETTINGS))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
        p.add_argument("--nominal", help="frozen nominal checkpoint")
        p.add_argument("--attacker", help="frozen attacker checkpoint")
        p.add_argument("--output", help="output directory")

    def sub_parser(name, help_text):
        return sub.add_parser(name, help=help_text, epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)

    p = sub_parser("train", "train one controller")
    run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub_parser("eval", "evaluate a checkpoint with its mean action")
    run_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--episodes", type=int, default=20)
    p.set_defaults(func=cmd_eval)

    p = sub_parser("grid", "hyperparameter grid search")
    run_args(p)
    p.add_argument("--values", action="append", metavar="KEY=[A,B]", help="grid axis; default is the full sweep")
    p.add_argument("--iterations", type=int, help="iteration budget per run")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("suite", help="fixed hover-point experiments")
    p.add_argument("--scenario", default="all", help="'all' or a comma list of " + ",".join(evaluation.SCENARIOS))
    p.add_argument("--nominal")
    p.add_argument("--attacker")
    p.add_argument("--defender")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-trajectories", action="store_true", help="skip per-run trajectory CSVs")
    p.add_argument("--output")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except training.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (nn.CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
