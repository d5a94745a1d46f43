"""Staged training of the nominal, attacker and defender controllers.

The nominal controller is trained first.  The attacker then learns against
the frozen nominal, and the defender against both frozen layers.  Runs are
fully determined by their :class:`RunConfig`, including the master seed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import nn, ppo
from .dynamics import PhysicalParams, Workspace
from .env import ACT_DIM, OBS_DIM, EnvConfig, EpisodeOutcome, QuadrotorEnv, RandomAttack, RewardWeights

log = logging.getLogger(__name__)

DIAGNOSTICS_FIELDS = (
    "iteration", "mean_episode_reward", "episodes", "loss", "policy_loss",
    "value_loss", "entropy", "clip_fraction", "approx_kl", "eval_mean", "seconds",
)


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass
class FrozenConfig:
    nominal: str | None = None
    attacker: str | None = None
    # Sample frozen layers from their Gaussian instead of acting on the mean.
    stochastic: bool = False


@dataclass
class EvalConfig:
    every: int = 10
    episodes: int = 20
    delta: float = 0.01
    patience: int = 3


@dataclass
class RunConfig:
    role: str = "nominal"
    seed: int = 0
    iterations: int = 150
    hidden: tuple[int, ...] = (128, 64)
    output_dir: str = "runs"
    ppo: ppo.PpoConfig = field(default_factory=ppo.PpoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    frozen: FrozenConfig = field(default_factory=FrozenConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.env.role != self.role:
            self.env = dataclasses.replace(self.env, role=self.role)
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")

    @property
    def spec(self) -> nn.MlpSpec:
        return nn.MlpSpec(OBS_DIM, tuple(self.hidden), ACT_DIM)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data)

    def replace(self, overrides: dict) -> "RunConfig":
        return RunConfig.from_dict(apply_overrides(self.to_dict(), overrides))

    def check_frozen(self) -> None:
        needed = {"nominal": [], "attacker": ["nominal"], "defender": ["nominal", "attacker"]}[self.role]
        for name in needed:
            path = getattr(self.frozen, name)
            if path is None:
                raise ConfigError(f"{self.role} run needs frozen.{name}")
            if not Path(path).is_file():
                raise ConfigError(f"frozen.{name} checkpoint not found: {path}")


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _build(cls, data: dict):
    """Construct dataclass ``cls`` from a nested dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {data!r}")
    template = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        current = getattr(template, name)
        if dataclasses.is_dataclass(current):
            value = _build(type(current), value)
        elif isinstance(current, tuple) or (current is None and isinstance(value, list)):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def parse_value(text: str):
    """Parse an override value with YAML scalar/list rules (``1e-4``, ``[64, 64]``)."""
    value = yaml.safe_load(text)
    # YAML 1.1 reads "1e-4" as a string; accept it as a float.
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Set dotted keys (``ppo.gamma``) in a nested dict; unknown keys raise."""
    data = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[leaf] = parse_value(value) if isinstance(value, str) else value
    return data


def flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


# Final per-role settings of the reference tuning.
ROLE_SETTINGS = {
    "nominal": {"hidden": [128, 64], "ppo.lr": 3e-4, "ppo.M": 256, "ppo.gamma": 0.99},
    "attacker": {"hidden": [64, 64], "ppo.lr": 1e-4, "ppo.M": 128, "ppo.gamma": 0.99},
    "defender": {"hidden": [64, 64], "ppo.lr": 1e-4, "ppo.M": 128, "ppo.gamma": 0.99},
}
PROFILES = {
    "desk": {"ppo.T": 2048, "ppo.N": 4, "iterations": 150, "eval.every": 10, "eval.patience": 6},
    "paper": {"ppo.T": 5120, "ppo.N": 5, "iterations": 36, "eval.every": 5},
}
# Per-role adjustments that only the reduced desk budget needs.  For the
# nominal, a shorter discount and no entropy bonus keep the truncated-return
# advantages usable with 8k steps per iteration, and rewards are scaled so
# value targets stay O(1).  The attacker and defender get the larger grid
# learning rate so they leave the initial plateau well inside 150 iterations;
# the defender also shares the nominal's discount and scaling.
DESK_ROLE_SETTINGS = {
    "nominal": {"ppo.gamma": 0.95, "ppo.c2": 0.0, "ppo.reward_scale": 0.05},
    "attacker": {"ppo.lr": 3e-4},
    "defender": {"ppo.lr": 3e-4, "ppo.gamma": 0.95, "ppo.c2": 0.0, "ppo.reward_scale": 0.05},
}
# Attacker and defender train with the attack live from the first step.
ROLE_ENV = {
    "nominal": {},
    "attacker": {"env.attack_start_s": 0.0},
    "defender": {"env.attack_start_s": 0.0, "env.attack_start_max_s": 2.0, "env.random_attack_prob": 0.25},
}


def profile_config(profile: str = "desk", role: str = "nominal", overrides: dict | None = None) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    if role not in ROLE_SETTINGS:
        raise ConfigError(f"unknown role {role!r}")
    desk = DESK_ROLE_SETTINGS[role] if profile == "desk" else {}
    merged = {"role": role, **ROLE_SETTINGS[role], **ROLE_ENV[role], **PROFILES[profile], **desk, **(overrides or {})}
    return RunConfig().replace(merged)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    base = RunConfig().to_dict()
    return RunConfig.from_dict(apply_overrides(base, {**flatten(data), **(overrides or {})}))


def dump_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


class PolicyController:
    """Frozen policy as an environment layer: observation in, raw command out."""

    def __init__(self, params: nn.PolicyParams, stochastic: bool = False, rng: np.random.Generator | None = None):
        self.params = params
        self.stochastic = stochastic
        self.rng = rng

    @classmethod
    def from_checkpoint(cls, path, **kwargs) -> "PolicyController":
        return cls(nn.load_checkpoint(path).params, **kwargs)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        if self.stochastic:
            return ppo.sample_action(self.params, obs, self.rng)[0]
        return nn.forward(self.params, obs)[0]


def _mean_bias(role: str, physics: PhysicalParams):
    # The nominal starts out hovering; the other layers start out silent.
    return np.array([physics.v_hover, 0.0, 0.0, 0.0]) if role == "nominal" else None


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def frozen_layers(config: RunConfig, rng: np.random.Generator | None = None) -> dict:
    layers = {}
    for name in ("nominal", "attacker"):
        path = getattr(config.frozen, name)
        if path is not None and (name == "nominal" or config.role == "defender"):
            layers[name] = PolicyController.from_checkpoint(path, stochastic=config.frozen.stochastic, rng=rng)
    return layers


@dataclass
class EvalResult:
    mean: float
    std: float
    outcomes: list[EpisodeOutcome]

    @property
    def crash_rate(self) -> float:
        return float(np.mean([o.crashed for o in self.outcomes]))


def evaluate_policy(
    policy,
    env_config: EnvConfig,
    episodes: int = 20,
    seed: int | tuple[int, ...] = 0,
    *,
    weights: RewardWeights | None = None,
    layers: dict | None = None,
    spawn=None,
    hover=None,
    record: bool = False,
) -> EvalResult:
    """Run the mean action of ``policy`` for ``episodes`` episodes.

    ``policy`` is a checkpoint path, a :class:`PolicyParams` or any
    controller callable.  Episode ``i`` draws its hover/spawn pair from a
    generator seeded with ``(*seed, i)``, so repeated calls agree exactly.
    A frozen ``layers["attacker"]`` may be the string ``"random"``.
    """
    if isinstance(policy, (str, Path)):
        policy = nn.load_checkpoint(policy).params
    if isinstance(policy, nn.PolicyParams):
        if policy.spec.input_dim != OBS_DIM or policy.spec.action_dim != ACT_DIM:
            raise ValueError(f"policy spec {policy.spec} does not fit the quadrotor environment")
        policy = PolicyController(policy)
    layers = dict(layers or {})
    layers[env_config.role] = policy
    outcomes = []
    for i in range(episodes):
        rng = np.random.default_rng([*np.atleast_1d(seed).tolist(), i])
        controllers = {k: layers.get(k) for k in ("nominal", "attacker", "defender")}
        if controllers["attacker"] == "random":
            controllers["attacker"] = RandomAttack(rng)
        env = QuadrotorEnv(env_config, weights, rng=rng, record=record, **controllers)
        env.reset(spawn=spawn, hover=hover)
        done = False
        while not done:
            _, _, done, _ = env.step_layers(*_layer_commands(env))
        outcomes.append(env.outcome())
    rewards = np.array([o.total_reward for o in outcomes])
    return EvalResult(float(rewards.mean()), float(rewards.std()), outcomes)


def _layer_commands(env: QuadrotorEnv):
    out = []
    for layer in ("b", "a", "d"):
        source = env.attack_source if layer == "a" else env.controllers[layer]
        out.append(None if source is None else source(env.observe(layer)))
    return out


@dataclass
class StopDecision:
    stop: bool
    best_index: int


def early_stop(history, delta: float = 0.01, patience: int = 3) -> StopDecision:
    """Stop once ``patience`` consecutive evaluations fail to beat the best.

    An evaluation improves when it exceeds ``best + delta * |best|``.
    ``best_index`` always points at the best evaluation so far.
    """
    history = list(history)
    if not history:
        return StopDecision(False, -1)
    best, best_i, stale = history[0], 0, 0
    for i, value in enumerate(history[1:], start=1):
        if value > best + delta * abs(best):
            best, best_i, stale = value, i, 0
        else:
            stale += 1
            if value > best:
                best, best_i = value, i
    return StopDecision(len(history) >= 2 and stale >= patience, best_i)


@dataclass
class TrainResult:
    checkpoint: Path
    sha256: str
    diagnostics: Path
    manifest: Path
    iterations: int
    eval_history: list[tuple[int, float]]
    best_iteration: int


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def train(config: RunConfig, output_dir=None) -> TrainResult:
    """Train one role; writes checkpoints, diagnostics CSV and a manifest.

    The returned checkpoint is the best-evaluated policy, not the last.
    """
    config.check_frozen()
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.yaml")
    cfg = config.ppo
    seeds = np.random.SeedSequence(config.seed).spawn(cfg.N + 4)
    init_seed, update_seq, eval_seq, frozen_seq = seeds[:4]
    env_seqs = seeds[4:]
    update_rng = np.random.default_rng(update_seq)
    eval_seed = _seed_int(eval_seq)

    frozen_before = {n: file_sha256(getattr(config.frozen, n)) for n in ("nominal", "attacker") if getattr(config.frozen, n)}
    layers = frozen_layers(config, np.random.default_rng(frozen_seq))
    envs = [
        QuadrotorEnv(config.env, config.reward, rng=np.random.default_rng(s), **layers)
        for s in env_seqs
    ]
    params = nn.init(config.spec, _seed_int(init_seed), _mean_bias(config.role, config.env.physics))
    adam = nn.AdamState.for_params(params)

    history: list[tuple[int, float]] = []
    best = None
    rows = []
    state = None
    iteration = 0
    started = time.perf_counter()
    for iteration in range(1, config.iterations + 1):
        buffer, state = ppo.collect_rollout(envs, params, cfg, update_rng, state)
        ppo.compute_advantages(buffer, cfg.gamma, cfg.reward_scale)
        infos = ppo.update(params, adam, buffer, cfg, update_rng)
        row = _diagnostics_row(iteration, buffer, infos, started)
        if iteration % config.eval.every == 0 or iteration == config.iterations:
            score = evaluate_policy(params, config.env, config.eval.episodes, eval_seed, weights=config.reward, layers=layers).mean
            row["eval_mean"] = score
            history.append((iteration, score))
            decision = early_stop([h[1] for h in history], config.eval.delta, config.eval.patience)
            if decision.best_index == len(history) - 1:
                best = (iteration, params.copy(), adam.copy())
            log.info("iter %d eval %.3f (best at %d)", iteration, score, history[decision.best_index][0])
            rows.append(row)
            if decision.stop:
                break
        else:
            rows.append(row)
        log.debug("iter %d reward %s", iteration, row["mean_episode_reward"])

    best_iteration, best_params, best_adam = best
    meta = {"role": config.role, "iteration": best_iteration, "config_sha256": _config_hash(config, frozen_before)}
    sha = nn.save_checkpoint(out / "checkpoint.bin", best_params, config.seed, best_adam, meta)
    nn.save_checkpoint(out / "last.bin", params, config.seed, adam, {**meta, "iteration": iteration})
    diag = out / "diagnostics.csv"
    with open(diag, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DIAGNOSTICS_FIELDS)
        writer.writeheader()
        writer.writerows(rows)

    for name, digest in frozen_before.items():
        if file_sha256(getattr(config.frozen, name)) != digest:
            raise RuntimeError(f"frozen {name} checkpoint changed during training")
    manifest = write_manifest(
        out / "manifest.json",
        config,
        checkpoints={"checkpoint.bin": sha, "last.bin": file_sha256(out / "last.bin"), **{f"frozen.{k}": v for k, v in frozen_before.items()}},
        extra={"iterations": iteration, "best_iteration": best_iteration, "eval_history": history},
    )
    return TrainResult(out / "checkpoint.bin", sha, diag, manifest, iteration, history, best_iteration)


def _diagnostics_row(iteration, buffer, infos, started) -> dict:
    returns = buffer.episode_returns
    mean = lambda attr: float(np.mean([getattr(i, attr) for i in infos])) if infos else math.nan
    return {
        "iteration": iteration,
        "mean_episode_reward": float(np.mean(returns)) if returns else math.nan,
        "episodes": len(returns),
        "loss": mean("loss"),
        "policy_loss": mean("policy_loss"),
        "value_loss": mean("value_loss"),
        "entropy": mean("entropy"),
        "clip_fraction": mean("clip_fraction"),
        "approx_kl": mean("approx_kl"),
        "eval_mean": "",
        "seconds": round(time.perf_counter() - started, 3),
    }


def _config_hash(config: RunConfig, frozen_sha: dict) -> str:
    # Frozen layers enter by content, not path, so the hash is location-free.
    data = config.to_dict()
    data["frozen"] = {**data["frozen"], **frozen_sha}
    text = json.dumps(data, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(path, config: RunConfig | None, checkpoints: dict, extra: dict | None = None) -> Path:
    manifest = {
        "config": config.to_dict() if config is not None else None,
        "seed": config.seed if config is not None else None,
        "checkpoints": checkpoints,
        **(extra or {}),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Path(path)


@dataclass
class GridSpec:
    role: str
    values: dict[str, list]

    def fixed(self, key: str, value) -> "GridSpec":
        """Fix one axis to a single value (e.g. after discarding a discount)."""
        return GridSpec(self.role, {**self.values, key: [value]})

    def combinations(self) -> list[dict]:
        keys = list(self.values)
        seen, combos = set(), []
        for combo in itertools.product(*(self.values[k] for k in keys)):
            marker = json.dumps(combo)
            if marker not in seen:
                seen.add(marker)
                combos.append(dict(zip(keys, combo)))
        return combos


# Candidate lists for the nominal sweep and the attacker/defender sweep.
PAPER_GRIDS = {
    "nominal": GridSpec("nominal", {
        "ppo.T": [5120, 10240],
        "hidden": [[64, 64], [128, 64], [128, 128]],
        "ppo.lr": [1e-4, 3e-4],
        "ppo.M": [128, 256],
        "ppo.gamma": [0.85, 0.99],
    }),
    "adversarial": GridSpec("attacker", {
        "ppo.T": [5120, 10240],
        "hidden": [[64, 64], [128, 64]],
        "ppo.lr": [1e-4, 3e-4],
        "ppo.M": [128, 256],
        "ppo.gamma": [0.85, 0.99],
    }),
}


def grid_search(grid: GridSpec, base: RunConfig, output_dir, iterations: int | None = None) -> Path:
    """Train every distinct combination from the same base seed and rank them.

    Failed runs are recorded with their error and ranked last.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    combos = grid.combinations()
    log.info("grid: %d combinations", len(combos))
    results = []
    for i, combo in enumerate(combos):
        overrides = {"role": grid.role, **combo}
        if iterations is not None:
            overrides["iterations"] = iterations
        row = {"run": i, **{k: json.dumps(v) for k, v in combo.items()}}
        try:
            result = train(base.replace(overrides), out / f"run_{i:03d}")
            row.update(best_eval=max(s for _, s in result.eval_history), sha256=result.sha256, error="")
        except Exception as exc:  # a failed cell must not end the sweep
            log.exception("grid run %d failed", i)
            row.update(best_eval=math.nan, sha256="", error=repr(exc))
        results.append(row)
    results.sort(key=lambda r: -math.inf if math.isnan(r["best_eval"]) else r["best_eval"], reverse=True)
    path = out / "ranking.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["rank", *results[0].keys()] if results else ["rank"])
        writer.writeheader()
        for rank, row in enumerate(results, start=1):
            writer.writerow({"rank": rank, **row})
    return path
