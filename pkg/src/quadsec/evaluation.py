"""Fixed hover-point experiments under nominal, attacked and defended flight.

Each scenario flies the vehicle from a fixed spawn to six hover points,
repeating every run, and condenses the distance-to-target curves into crash,
distance, settling and oscillation metrics.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env as qenv
from .dynamics import PhysicalParams
from .training import PolicyController, evaluate_policy

log = logging.getLogger(__name__)

SPAWN = (0.0, 0.0, 0.5)
HOVER_POINTS = (
    (0.85, 0.90, 1.7),
    (0.0, 0.0, 0.5),
    (0.0, 0.0, 1.2),
    (0.7, 0.85, 0.7),
    (0.0, -1.0, 1.5),
    (-1.0, -1.0, 0.5),
)
# scenario -> (attack layer, defense layer present)
SCENARIOS = {
    "nominal": (None, False),
    "attack": ("attacker", False),
    "random": ("random", False),
    "defense": ("attacker", True),
    "defense_random": ("random", True),
}
SETTLE_THRESHOLD_M = 0.1
OSCILLATION_WINDOW_S = 2.0
_XYZ = slice(1, 4)


@dataclass
class ExperimentSuite:
    spawn: tuple[float, float, float] = SPAWN
    hover_points: tuple = HOVER_POINTS
    repeats: int = 20
    horizon_s: float = 10.0
    attack_start_s: float = 2.0
    scenarios: tuple[str, ...] = tuple(SCENARIOS)
    physics: PhysicalParams = field(default_factory=PhysicalParams)

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        unknown = set(self.scenarios) - set(SCENARIOS)
        if unknown:
            raise ValueError(f"unknown scenarios {sorted(unknown)}")

    def env_config(self) -> qenv.EnvConfig:
        return qenv.EnvConfig(
            role="nominal",
            horizon_s=self.horizon_s,
            attack_start_s=self.attack_start_s,
            physics=self.physics,
        )


def hover_key(point) -> str:
    return ",".join(f"{c:g}" for c in point)


def distance_series(trajectory: np.ndarray, hover) -> np.ndarray:
    """Euclidean distance to ``hover`` at every logged row of a trajectory."""
    trajectory = np.atleast_2d(trajectory)
    if trajectory.shape[0] == 0:
        raise ValueError("empty trajectory")
    return np.linalg.norm(trajectory[:, _XYZ] - np.asarray(hover, float), axis=1)


def settling_time(dist: np.ndarray, dt: float, threshold: float = SETTLE_THRESHOLD_M) -> float | None:
    """First time after which the distance stays below ``threshold``."""
    outside = np.flatnonzero(dist >= threshold)
    if outside.size == 0:
        return 0.0
    first = outside[-1] + 1
    return None if first >= dist.size else first * dt


def oscillation(dist: np.ndarray, dt: float, window_s: float = OSCILLATION_WINDOW_S) -> float:
    """Half the peak-to-peak distance over the trailing window."""
    n = max(1, int(round(window_s / dt)) + 1)
    tail = dist[-n:]
    return 0.5 * float(tail.max() - tail.min())


def mean_curve(series: list[np.ndarray]) -> np.ndarray:
    """Average distance over the runs still flying at each tick."""
    width = max(s.size for s in series)
    stack = np.full((len(series), width), np.nan)
    for i, s in enumerate(series):
        stack[i, : s.size] = s
    return np.nanmean(stack, axis=0)


def summarize_runs(outcomes: list[qenv.EpisodeOutcome], hover, dt: float) -> dict:
    crashed = [o for o in outcomes if o.crashed]
    flown = [o for o in outcomes if not o.crashed]
    dists = [distance_series(o.trajectory, hover) for o in flown]
    settle = [settling_time(d, dt) for d in dists]
    settle = [s for s in settle if s is not None]
    return {
        "crash_rate": len(crashed) / len(outcomes),
        "mean_final_dist_m": float(np.mean([o.final_distance for o in outcomes])),
        "mean_settling_s": float(np.mean(settle)) if settle else None,
        "oscillation_m": float(np.mean([oscillation(d, dt) for d in dists])) if dists else None,
        "mean_time_to_crash_s": float(np.mean([o.steps * dt for o in crashed])) if crashed else None,
        "n_runs": len(outcomes),
    }


@dataclass
class SuiteResult:
    summary: dict
    trajectories: dict  # (scenario, hover_key) -> list of trajectory arrays
    skipped: list[str]

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"


def _controller(source):
    if source is None or callable(source):
        return source
    return PolicyController.from_checkpoint(source)


def run_suite(
    suite: ExperimentSuite,
    checkpoints: dict,
    seed: int = 0,
    output_dir=None,
    write_trajectories: bool = True,
) -> SuiteResult:
    """Fly every scenario on every hover point ``suite.repeats`` times.

    ``checkpoints`` maps ``nominal``/``attacker``/``defender`` to checkpoint
    paths or controller callables.  Scenarios whose layers are missing are
    skipped with a log entry.  Repeat ``r`` at hover index ``h`` uses the
    random stream ``(seed, h, r)`` in every scenario.
    """
    layers = {role: _controller(checkpoints.get(role)) for role in qenv.ROLES}
    if layers["nominal"] is None:
        raise ValueError("the suite needs a nominal controller")
    config = suite.env_config()
    dt = config.dt
    summary, trajectories, skipped = {}, {}, []
    for scenario in suite.scenarios:
        attack, defended = SCENARIOS[scenario]
        missing = [r for r in (attack, "defender" if defended else None) if r in qenv.ROLES and layers[r] is None]
        if missing:
            log.warning("skipping scenario %s: no %s controller", scenario, " or ".join(missing))
            skipped.append(scenario)
            continue
        frozen = {
            "attacker": "random" if attack == "random" else layers["attacker"] if attack else None,
            "defender": layers["defender"] if defended else None,
        }
        summary[scenario] = {}
        for h, hover in enumerate(suite.hover_points):
            key = hover_key(hover)
            result = evaluate_policy(
                layers["nominal"], config, suite.repeats, (seed, h),
                layers=frozen, spawn=suite.spawn, hover=hover, record=True,
            )
            summary[scenario][key] = summarize_runs(result.outcomes, hover, dt)
            trajectories[scenario, key] = [o.trajectory for o in result.outcomes]
    result = SuiteResult(summary, trajectories, skipped)
    if output_dir is not None:
        write_suite(result, Path(output_dir), suite, write_trajectories)
    return result


def write_suite(result: SuiteResult, out: Path, suite: ExperimentSuite, write_trajectories: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(result.summary_json())
    hovers = {hover_key(p): p for p in suite.hover_points}
    for (scenario, key), runs in result.trajectories.items():
        stem = f"{scenario}_{key.replace(',', '_')}"
        if write_trajectories:
            folder = out / "trajectories" / stem
            folder.mkdir(parents=True, exist_ok=True)
            for r, traj in enumerate(runs):
                qenv.write_trajectory_csv(folder / f"run_{r:02d}.csv", traj)
        curve = mean_curve([distance_series(t, hovers[key]) for t in runs])
        (out / f"{stem}.svg").write_text(distance_svg(curve, suite.physics.dt, f"{scenario} hover {key}"))


def distance_svg(curve: np.ndarray, dt: float, title: str, width: int = 480, height: int = 240) -> str:
    """Minimal line plot of a distance curve (seconds vs meters)."""
    pad = 30
    t = np.arange(curve.size) * dt
    t_max = max(t[-1], dt)
    d_max = max(float(np.nanmax(curve)), 1e-3)
    xs = pad + (width - 2 * pad) * t / t_max
    ys = height - pad - (height - 2 * pad) * curve / d_max
    points = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys) if np.isfinite(y))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<text x="{pad}" y="18" font-size="12">{title}</text>\n'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<text x="{width - pad}" y="{height - 8}" font-size="10" text-anchor="end">{t_max:g} s</text>\n'
        f'<text x="2" y="{pad}" font-size="10">{d_max:.2f} m</text>\n'
        f'<polyline fill="none" stroke="steelblue" points="{points}"/>\n'
        "</svg>\n"
    )


def overall(summary_scenario: dict) -> dict:
    """Run-weighted crash rate and final distance across all hover points."""
    n = sum(v["n_runs"] for v in summary_scenario.values())
    return {
        "crash_rate": sum(v["crash_rate"] * v["n_runs"] for v in summary_scenario.values()) / n,
        "mean_final_dist_m": sum(v["mean_final_dist_m"] * v["n_runs"] for v in summary_scenario.values()) / n,
        "n_runs": n,
    }


def _worse(a: dict, b: dict) -> bool:
    """Whether outcome ``a`` degrades tracking more than ``b``."""
    if a["crash_rate"] != b["crash_rate"]:
        return a["crash_rate"] > b["crash_rate"]
    return a["mean_final_dist_m"] > b["mean_final_dist_m"]


def compare_scenarios(summary: dict, optimal: str = "attack", random: str = "random", defended: str = "defense") -> dict:
    """Per-hover deltas between scenarios plus optimal-vs-random and recovery flags.

    Pairs whose scenarios are absent from ``summary`` are left out.
    """
    if len(summary) < 2:
        raise ValueError("need at least two scenarios to compare")
    keys = {frozenset(v) for v in summary.values()}
    if len(keys) != 1:
        raise ValueError("scenarios were run on different hover points")
    report = {}
    pairs = {"optimal_vs_random": (optimal, random), "defense_vs_attack": (defended, optimal)}
    for name, (a, b) in pairs.items():
        if a not in summary or b not in summary:
            continue
        rows = {}
        for key in sorted(summary[a]):
            sa, sb = summary[a][key], summary[b][key]
            rows[key] = {
                "delta_crash_rate": sa["crash_rate"] - sb["crash_rate"],
                "delta_final_dist_m": sa["mean_final_dist_m"] - sb["mean_final_dist_m"],
            }
        oa, ob = overall(summary[a]), overall(summary[b])
        rows["overall"] = {
            "delta_crash_rate": oa["crash_rate"] - ob["crash_rate"],
            "delta_final_dist_m": oa["mean_final_dist_m"] - ob["mean_final_dist_m"],
        }
        for key, row in rows.items():
            sa = oa if key == "overall" else summary[a][key]
            sb = ob if key == "overall" else summary[b][key]
            if name == "optimal_vs_random":
                row["optimal_gt_random"] = _worse(sa, sb)
                row["crash_and_dist_gt"] = sa["crash_rate"] > sb["crash_rate"] and sa["mean_final_dist_m"] > sb["mean_final_dist_m"]
            else:
                row["recovered"] = _worse(sb, sa)
        report[name] = rows
    return report
