"""Layered hover-point MDPs for the nominal, attacker and defender roles.

Every control tick the nominal command, an optional false-data injection
and an optional countermeasure are summed channel-wise, clamped to the
actuator bounds and applied to the kinematics.  The learning role receives
its own reward; the other layers are supplied as frozen controllers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics as dyn
from .dynamics import ControlCommand, PhysicalParams, QuadrotorState, Workspace

ROLES = ("nominal", "attacker", "defender")
LAYERS = ("b", "a", "d")  # nominal, attack, defense
OBS_DIM = 18
ACT_DIM = 4
OBS_FIELDS = (
    "p", "q", "r",
    "phi", "theta", "psi",
    "vx", "vy", "vz",
    "x", "y", "z",
    "p_prev", "q_prev", "r_prev",
    "x_h", "y_h", "z_h",
)
TRAJECTORY_HEADER = (
    "t,x,y,z,phi,theta,psi,v_b,p_b,q_b,r_b,v_a,p_a,q_a,r_a,v_d,p_d,q_d,r_d,dist"
).split(",")

Controller = Callable[[np.ndarray], np.ndarray]


class EpisodeFinished(RuntimeError):
    """Raised when stepping an environment whose episode has ended."""


@dataclass
class RewardWeights:
    Q: tuple[float, float, float] = (1.0, 1.0, 1.0)
    L: tuple[float, float, float] = (1.0, 1.0, 0.0)
    R: tuple[float, float, float, float] = (0.01, 0.05, 0.05, 0.05)
    survival_bonus: float = 1.5

    def __post_init__(self):
        if min(self.Q) < 0 or min(self.L) < 0:
            raise ValueError("Q and L must be non-negative")
        if min(self.R) <= 0:
            raise ValueError("R must be positive")


@dataclass
class EnvConfig:
    role: str = "nominal"
    xy_range: tuple[float, float] = (-1.0, 1.0)
    z_range: tuple[float, float] = (0.0, 2.0)
    horizon_s: float = 10.0
    attack_start_s: float = 0.0
    # If set, each episode draws its attack start uniformly from
    # [attack_start_s, attack_start_max_s].
    attack_start_max_s: float | None = None
    # Probability that an episode's attack layer is the random injection
    # instead of the supplied attack controller.
    random_attack_prob: float = 0.0
    # Discount used to fold the remaining episode of a crashed vehicle into
    # the terminal reward; None ends the reward stream at the crash.
    crash_tail_gamma: float | None = 0.99
    workspace: Workspace = field(default_factory=Workspace)
    physics: PhysicalParams = field(default_factory=PhysicalParams)
    seed: int | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.attack_start_s < self.horizon_s:
            raise ValueError("attack start must precede the horizon")
        if self.attack_start_max_s is not None and not (
            self.attack_start_s <= self.attack_start_max_s < self.horizon_s
        ):
            raise ValueError("attack_start_max_s must lie in [attack_start_s, horizon)")

    @property
    def dt(self) -> float:
        return self.physics.dt

    @property
    def horizon_steps(self) -> int:
        return int(round(self.horizon_s / self.physics.dt))


@dataclass
class EpisodeOutcome:
    crashed: bool
    steps: int
    final_distance: float
    crash_cause: str | None
    total_reward: float
    # Rows follow TRAJECTORY_HEADER: the initial state plus one row per step.
    trajectory: np.ndarray | None = None


def build_observation(state: QuadrotorState, prev_rates, hover) -> np.ndarray:
    return np.concatenate(
        [state.body_rates, state.orientation, state.velocity, state.position, np.asarray(prev_rates, float), np.asarray(hover, float)]
    )


def compose_commands(u_b, u_a=None, u_d=None) -> tuple[ControlCommand, dict, bool]:
    """Sum the present layers channel-wise and clamp to actuator bounds.

    Returns the applied command, each layer's raw contribution (zeros for
    absent layers) and whether clamping changed the sum.
    """
    layers = {"b": u_b, "a": u_a, "d": u_d}
    contributions = {}
    total = np.zeros(ACT_DIM)
    for name, u in layers.items():
        if u is None:
            contributions[name] = np.zeros(ACT_DIM)
            continue
        u = np.asarray(u, dtype=np.float64).reshape(ACT_DIM)
        if not np.isfinite(u).all():
            raise dyn.InvalidInput(f"non-finite {name}-layer command {u}")
        contributions[name] = u
        total = total + u
    applied, clipped = dyn.clamp_command(total)
    return applied, contributions, clipped


def position_cost(position, hover, Q) -> float:
    e = np.asarray(position) - np.asarray(hover)
    return float(np.dot(np.asarray(Q) * e, e))


def reward(role: str, state_next: QuadrotorState, hover, own_command, weights: RewardWeights) -> float:
    """Per-step reward of ``role`` after the transition into ``state_next``."""
    err = position_cost(state_next.position, hover, weights.Q)
    if role == "nominal":
        w = state_next.orientation
        att = float(np.dot(np.asarray(weights.L) * w, w))
        return weights.survival_bonus - err - att
    u = np.asarray(own_command, dtype=np.float64)
    cost = float(np.dot(np.asarray(weights.R) * u, u))
    if role == "attacker":
        return err - cost
    if role == "defender":
        return -err - cost
    raise ValueError(f"unknown role {role!r}")


def random_attack(rng: np.random.Generator) -> np.ndarray:
    """Injection drawn uniformly over the full action range, channel by channel."""
    v = rng.uniform(dyn.V_MIN, dyn.V_MAX)
    rates = rng.uniform(-dyn.RATE_LIMIT, dyn.RATE_LIMIT, size=3)
    return np.concatenate([[v], rates])


class RandomAttack:
    """Controller wrapper around :func:`random_attack` (ignores observations)."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def __call__(self, obs):
        return random_attack(self.rng)


def _tail_factor(gamma: float | None, remaining: int) -> float:
    if gamma is None or remaining <= 0:
        return 0.0
    return gamma * (1.0 - gamma**remaining) / (1.0 - gamma)


class QuadrotorEnv:
    """One quadrotor, three optional command layers, one learning role.

    ``nominal``, ``attacker`` and ``defender`` are frozen controllers mapping
    an observation to a raw command.  The layer matching ``config.role`` is
    driven through :meth:`step`; the remaining supplied layers act on their
    own observations.  :meth:`step_layers` drives all layers explicitly.
    """

    def __init__(
        self,
        config: EnvConfig | None = None,
        weights: RewardWeights | None = None,
        *,
        nominal: Controller | None = None,
        attacker: Controller | None = None,
        defender: Controller | None = None,
        rng: np.random.Generator | None = None,
        record: bool = False,
    ):
        self.config = config or EnvConfig()
        self.weights = weights or RewardWeights()
        self.controllers = {"b": nominal, "a": attacker, "d": defender}
        self.rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        self._random_attack = RandomAttack(self.rng)
        self.record = record
        self.learner = LAYERS[ROLES.index(self.config.role)]
        if self.config.role == "attacker" and nominal is None:
            raise ValueError("attacker role needs a nominal controller")
        if self.config.role == "defender" and (nominal is None or attacker is None):
            raise ValueError("defender role needs nominal and attacker controllers")
        self.state: QuadrotorState | None = None
        self.done = True

    # --- lifecycle ---------------------------------------------------------

    def reset(self, spawn=None, hover=None) -> np.ndarray:
        """Start an episode; ``spawn``/``hover`` override the random draws."""
        cfg = self.config
        lo, hi = cfg.xy_range
        zlo, zhi = cfg.z_range
        draw = lambda: np.array([self.rng.uniform(lo, hi), self.rng.uniform(lo, hi), self.rng.uniform(zlo, zhi)])
        # Both points are drawn every reset so overrides do not shift the stream.
        hover_draw, spawn_draw = draw(), draw()
        self.hover = np.asarray(hover if hover is not None else hover_draw, dtype=np.float64)
        start = np.asarray(spawn if spawn is not None else spawn_draw, dtype=np.float64)
        self.state = QuadrotorState.at(start)
        self.prev_rates = {k: np.zeros(3) for k in LAYERS}
        self.k = 0
        self.done = False
        self.total_reward = 0.0
        self.crash_cause = None
        start_s = cfg.attack_start_s
        if cfg.attack_start_max_s is not None:
            start_s = self.rng.uniform(cfg.attack_start_s, cfg.attack_start_max_s)
        self.attack_start_step = int(math.ceil(start_s / cfg.dt - 1e-9))
        self.attack_source = self.controllers["a"]
        if cfg.random_attack_prob > 0 and self.rng.uniform() < cfg.random_attack_prob:
            self.attack_source = self._random_attack
        self._rows = []
        return self.observe(self.learner)

    def observe(self, layer: str) -> np.ndarray:
        return build_observation(self.state, self.prev_rates[layer], self.hover)

    @property
    def time(self) -> float:
        return self.k * self.config.dt

    @property
    def attack_active(self) -> bool:
        return self.k >= self.attack_start_step

    def distance(self) -> float:
        return float(np.linalg.norm(self.state.position - self.hover))

    # --- stepping ----------------------------------------------------------

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        """Apply the learning role's raw command; frozen layers fill the rest."""
        commands = {}
        for layer in LAYERS:
            if layer == self.learner:
                commands[layer] = np.asarray(action, dtype=np.float64)
            else:
                source = self.attack_source if layer == "a" else self.controllers[layer]
                if source is not None:
                    commands[layer] = source(self.observe(layer))
        return self.step_layers(commands.get("b"), commands.get("a"), commands.get("d"))

    def step_layers(self, u_b, u_a=None, u_d=None) -> tuple[np.ndarray, float, bool, dict]:
        if self.done:
            raise EpisodeFinished("episode has finished; call reset()")
        cfg = self.config
        if u_b is None:
            u_b = np.zeros(ACT_DIM)
        attack_applied = u_a is not None and self.attack_active
        applied, contributions, clipped = compose_commands(u_b, u_a if attack_applied else None, u_d)
        if u_a is not None:
            contributions["a"] = np.asarray(u_a, dtype=np.float64)
        prev_state = self.state
        result = dyn.step(prev_state, applied, cfg.physics, cfg.workspace)
        self.state = result.state
        for layer, u in contributions.items():
            self.prev_rates[layer] = np.clip(u[1:], -dyn.RATE_LIMIT, dyn.RATE_LIMIT)

        own = contributions[self.learner]
        r = reward(cfg.role, self.state, self.hover, own, self.weights)
        self.k += 1
        remaining = cfg.horizon_steps - self.k
        if result.crashed:
            # The wreck keeps its tracking error (and the layer stays silent)
            # for the rest of the episode.
            resting = reward(cfg.role, self.state, self.hover, np.zeros(ACT_DIM), self.weights)
            if cfg.role == "nominal":
                resting -= self.weights.survival_bonus
            r += resting * _tail_factor(cfg.crash_tail_gamma, remaining)
            self.crash_cause = result.crash_cause
        self.total_reward += r
        truncated = not result.crashed and remaining <= 0
        self.done = result.crashed or truncated

        if self.record:
            self._rows.append(self._row(prev_state, self.k - 1, contributions, attack_applied))
            if self.done:
                self._rows.append(self._row(self.state, self.k, None, False))

        info = {
            "t": self.time,
            "applied": applied,
            "commands": contributions,
            "attack_applied": attack_applied,
            "clipped": clipped,
            "angle_clamped": result.clamped,
            "terminal": result.crashed,
            "truncated": truncated,
            "crash_cause": result.crash_cause,
        }
        return self.observe(self.learner), r, self.done, info

    def _row(self, state, k, contributions, attack_applied) -> np.ndarray:
        cmds = np.zeros(12)
        if contributions is not None:
            cmds[0:4] = contributions["b"]
            if attack_applied:
                cmds[4:8] = contributions["a"]
            cmds[8:12] = contributions["d"]
        dist = float(np.linalg.norm(state.position - self.hover))
        return np.concatenate([[k * self.config.dt], state.position, state.orientation, cmds, [dist]])

    def outcome(self) -> EpisodeOutcome:
        traj = np.array(self._rows) if self.record else None
        return EpisodeOutcome(
            crashed=self.crash_cause is not None,
            steps=self.k,
            final_distance=self.distance(),
            crash_cause=self.crash_cause,
            total_reward=self.total_reward,
            trajectory=traj,
        )


def write_trajectory_csv(path, trajectory: np.ndarray) -> None:
    np.savetxt(path, trajectory, delimiter=",", header=",".join(TRAJECTORY_HEADER), comments="", fmt="%.17g")


def read_trajectory_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
