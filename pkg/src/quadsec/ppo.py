"""Proximal policy optimization with a clipped surrogate, value and entropy terms."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn

log = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass
class PpoConfig:
    T: int = 2048
    N: int = 4
    K: int = 10
    M: int = 256
    gamma: float = 0.99
    clip_eps: float = 0.2
    c1: float = 0.5
    c2: float = 0.05
    lr: float = 3e-4
    # Constant multiplier on rewards before advantage estimation; keeps
    # critic targets near unit scale without changing the optimal policy.
    reward_scale: float = 1.0
    normalize_advantages: bool = True
    max_grad_norm: float | None = 0.5
    max_skipped_streak: int = 3

    def __post_init__(self):
        if min(self.T, self.N, self.M) < 1 or self.K < 0:
            raise ValueError("T, N, M must be positive and K non-negative")
        if self.M > self.N * self.T:
            raise ValueError(f"minibatch size M={self.M} exceeds N*T={self.N * self.T}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Log-density of a diagonal Gaussian, summed over the last axis."""
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + HALF_LOG_2PIE))


def sample_action(params: nn.PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    """Draw an action from the policy; returns (action, log_prob).

    Works for a single observation or a batch.  The log-probability is that
    of the raw (unclamped) sample.
    """
    action, logp, _ = _act(params, obs, rng)
    return action, logp


def _act(params, obs, rng):
    mean, value = nn.forward(params, obs)
    noise = rng.standard_normal(np.shape(mean))
    action = mean + np.exp(params.log_std) * noise
    return action, gaussian_log_prob(mean, params.log_std, action), value


def ratio(params: nn.PolicyParams, obs, action, log_prob_old):
    mean, _ = nn.forward(params, obs)
    return np.exp(gaussian_log_prob(mean, params.log_std, action) - log_prob_old)


@dataclass
class RolloutBuffer:
    """``T x N`` transitions from N actors, time-major.

    ``dones`` marks the last transition of an episode.  ``terminals`` marks
    the subset ending in a true terminal state; other episode ends (time
    limits) bootstrap from ``cut_values``.  ``last_values`` is the critic
    value at the state following the final transition of each actor.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    terminals: np.ndarray
    cut_values: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list[float] = field(default_factory=list)

    @classmethod
    def empty(cls, T: int, N: int, obs_dim: int, act_dim: int) -> "RolloutBuffer":
        z = lambda *shape: np.zeros(shape)
        return cls(
            obs=z(T, N, obs_dim),
            actions=z(T, N, act_dim),
            rewards=z(T, N),
            values=z(T, N),
            log_probs=z(T, N),
            dones=np.zeros((T, N), dtype=bool),
            terminals=np.zeros((T, N), dtype=bool),
            cut_values=z(T, N),
            last_values=z(N),
        )

    def __len__(self):
        return self.rewards.size

    def flat(self) -> dict[str, np.ndarray]:
        n = len(self)
        return {
            "obs": self.obs.reshape(n, -1),
            "actions": self.actions.reshape(n, -1),
            "log_probs": self.log_probs.reshape(n),
            "values": self.values.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
        }


def compute_advantages(buffer: RolloutBuffer, gamma: float, reward_scale: float = 1.0) -> RolloutBuffer:
    """Truncated n-step advantages, restarting at episode boundaries.

    For a transition at t inside a segment whose episode continues to the
    segment end T, ``A_t = sum_j gamma^(j-t) r_j + gamma^(T-t) V(s_T) - V(s_t)``,
    with every ``r_j`` multiplied by ``reward_scale``.
    """
    T = buffer.rewards.shape[0]
    rewards = buffer.rewards * reward_scale
    returns = np.zeros_like(buffer.rewards)
    g = buffer.last_values.copy()
    for t in reversed(range(T)):
        boot = np.where(buffer.terminals[t], 0.0, buffer.cut_values[t])
        g = np.where(buffer.dones[t], rewards[t] + gamma * boot, rewards[t] + gamma * g)
        returns[t] = g
    buffer.returns = returns
    buffer.advantages = returns - buffer.values
    return buffer


@dataclass
class LossInfo:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_loss(params: nn.PolicyParams, batch: dict, config: PpoConfig, with_grad: bool = False):
    """Minimization target ``-(L_clip - c1 * L_vf + c2 * S)`` on a minibatch.

    Returns ``(loss, LossInfo)`` or ``(loss, LossInfo, grads)``.
    """
    obs, actions = batch["obs"], batch["actions"]
    adv = batch["advantages"]
    if config.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    mean, value, cache = nn.forward(params, obs, return_cache=True)
    log_std = params.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    logp = gaussian_log_prob(mean, log_std, actions)
    log_ratio = logp - batch["log_probs"]
    r = np.exp(log_ratio)
    r_clip = np.clip(r, 1.0 - config.clip_eps, 1.0 + config.clip_eps)
    surr, surr_clip = r * adv, r_clip * adv
    l_clip = float(np.mean(np.minimum(surr, surr_clip)))
    value_err = value - batch["returns"]
    l_vf = float(np.mean(value_err**2))
    entropy = gaussian_entropy(log_std)
    loss = -l_clip + config.c1 * l_vf - config.c2 * entropy
    info = LossInfo(
        loss=loss,
        policy_loss=-l_clip,
        value_loss=l_vf,
        entropy=entropy,
        clip_fraction=float(np.mean(np.abs(r - 1.0) > config.clip_eps)),
        approx_kl=float(np.mean((r - 1.0) - log_ratio)),
    )
    if not math.isfinite(loss):
        raise nn.NonFiniteError(f"non-finite PPO loss {loss}")
    if not with_grad:
        return loss, info

    # Gradient flows through the ratio only where the unclipped term is the minimum.
    d_ratio = np.where(surr <= surr_clip, -adv, 0.0)
    d_logp = d_ratio * r
    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = d_logp[:, None] * (diff * diff * inv_var - 1.0) - config.c2
    d_value = 2.0 * config.c1 * value_err
    grads = nn.backward(params, cache, d_mean, d_value, d_log_std)
    return loss, info, grads


def clip_grad_norm(grads: nn.PolicyParams, max_norm: float) -> float:
    norm = nn.global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for a in grads.arrays():
            a *= scale
    return norm


def update(
    params: nn.PolicyParams,
    adam: nn.AdamState,
    buffer: RolloutBuffer,
    config: PpoConfig,
    rng: np.random.Generator,
) -> list[LossInfo]:
    """K epochs of shuffled minibatch Adam steps; mutates ``params`` and ``adam``.

    Minibatches whose loss or gradient is non-finite are skipped; more than
    ``config.max_skipped_streak`` consecutive skips raise NonFiniteError.
    """
    data = buffer.flat()
    n = len(buffer)
    history = []
    streak = 0
    for _ in range(config.K):
        order = rng.permutation(n)
        for start in range(0, n - config.M + 1, config.M):
            idx = order[start : start + config.M]
            mb = {k: v[idx] for k, v in data.items()}
            try:
                _, info, grads = ppo_loss(params, mb, config, with_grad=True)
                if config.max_grad_norm is not None:
                    clip_grad_norm(grads, config.max_grad_norm)
                nn.adam_step(params, adam, grads, config.lr)
            except nn.NonFiniteError as exc:
                streak += 1
                log.warning("skipping minibatch: %s", exc)
                if streak > config.max_skipped_streak:
                    raise nn.NonFiniteError(f"{streak} consecutive minibatches skipped") from exc
                continue
            streak = 0
            history.append(info)
    return history


def collect_rollout(envs, params: nn.PolicyParams, config: PpoConfig, rng: np.random.Generator, state=None):
    """Run the stochastic policy in ``config.N`` environments for T steps each.

    ``envs`` is a list of environment objects with ``reset() -> obs`` and
    ``step(action) -> (obs, reward, done, info)``; ``info["terminal"]`` says
    whether a finished episode ended in a true terminal state.  ``state``
    carries current observations and running returns between calls; it is
    returned alongside the buffer.
    """
    N, T = len(envs), config.T
    if N != config.N:
        raise ValueError(f"expected {config.N} environments, got {N}")
    if state is None:
        state = {"obs": np.stack([env.reset() for env in envs]), "running": np.zeros(N)}
    obs = state["obs"]
    running = state["running"]
    buf = RolloutBuffer.empty(T, N, obs.shape[1], params.spec.action_dim)
    for t in range(T):
        action, logp, value = _act(params, obs, rng)
        buf.obs[t], buf.actions[t], buf.log_probs[t], buf.values[t] = obs, action, logp, value
        next_obs = np.empty_like(obs)
        for i, env in enumerate(envs):
            o, r, done, info = env.step(action[i])
            buf.rewards[t, i] = r
            running[i] += r
            if done:
                buf.dones[t, i] = True
                buf.terminals[t, i] = bool(info.get("terminal", True))
                if not buf.terminals[t, i]:
                    buf.cut_values[t, i] = nn.forward(params, o)[1]
                buf.episode_returns.append(float(running[i]))
                running[i] = 0.0
                o = env.reset()
            next_obs[i] = o
        obs = next_obs
    buf.last_values[:] = nn.forward(params, obs)[1]
    return buf, {"obs": obs, "running": running}
