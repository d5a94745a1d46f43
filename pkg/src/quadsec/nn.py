"""Shared-trunk actor-critic MLP with hand-written backprop and Adam.

The trunk is a stack of tanh layers; two linear heads read its last hidden
layer, one producing the Gaussian action mean and one the state value.  The
action log-std is a free parameter vector, independent of the input.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
INIT_LOG_STD = math.log(0.5)

CHECKPOINT_MAGIC = b"QSECCKPT"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """Raised when a gradient, loss or parameter stops being finite."""


class CheckpointError(ValueError):
    """Raised for corrupt, truncated or mismatched checkpoint files."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int = 18
    hidden: tuple[int, ...] = (64, 64)
    action_dim: int = 4

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden must be a non-empty list of positive widths")
        if self.input_dim < 1 or self.action_dim < 1:
            raise ValueError("input_dim and action_dim must be positive")

    @property
    def param_count(self) -> int:
        dims = (self.input_dim, *self.hidden)
        trunk = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
        last = self.hidden[-1]
        return trunk + (last * self.action_dim + self.action_dim) + (last + 1) + self.action_dim


@dataclass
class PolicyParams:
    """Network weights; ``weights[i]`` has shape (fan_in, fan_out)."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mean_w: np.ndarray
    mean_b: np.ndarray
    value_w: np.ndarray
    value_b: np.ndarray
    log_std: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in canonical (checkpoint) order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.mean_w, self.mean_b, self.value_w, self.value_b, self.log_std]

    def copy(self) -> "PolicyParams":
        return self.from_arrays(self.spec, [a.copy() for a in self.arrays()])

    @classmethod
    def from_arrays(cls, spec: MlpSpec, arrays: list[np.ndarray]) -> "PolicyParams":
        n = len(spec.hidden)
        trunk = arrays[: 2 * n]
        return cls(spec, list(trunk[0::2]), list(trunk[1::2]), *arrays[2 * n :])

    def zeros_like(self) -> "PolicyParams":
        return self.from_arrays(self.spec, [np.zeros_like(a) for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vector: np.ndarray) -> None:
        offset = 0
        for a in self.arrays():
            a[...] = vector[offset : offset + a.size].reshape(a.shape)
            offset += a.size

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init(spec: MlpSpec, seed: int, mean_bias=None) -> PolicyParams:
    """Orthogonal initialization (gain sqrt 2 trunk, 0.01 mean head, 1 value head).

    ``mean_bias`` optionally centers the initial action mean, e.g. on the
    hover thrust for a flight controller.
    """
    rng = np.random.default_rng(seed)
    dims = (spec.input_dim, *spec.hidden)
    weights = [_orthogonal(rng, a, b, math.sqrt(2.0)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    last = spec.hidden[-1]
    mean_b = np.zeros(spec.action_dim)
    if mean_bias is not None:
        mean_b[:] = mean_bias
    return PolicyParams(
        spec=spec,
        weights=weights,
        biases=biases,
        mean_w=_orthogonal(rng, last, spec.action_dim, 0.01),
        mean_b=mean_b,
        value_w=_orthogonal(rng, last, 1, 1.0),
        value_b=np.zeros(1),
        log_std=np.full(spec.action_dim, INIT_LOG_STD),
    )


@dataclass
class ForwardCache:
    inputs: np.ndarray
    activations: list[np.ndarray]


def forward(params: PolicyParams, obs: np.ndarray, return_cache: bool = False):
    """Action mean and state value for one observation or a (B, input_dim) batch."""
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(f"expected observations of width {params.spec.input_dim}, got {obs.shape}")
    activations = []
    h = x
    for w, b in zip(params.weights, params.biases):
        h = np.tanh(h @ w + b)
        activations.append(h)
    mean = h @ params.mean_w + params.mean_b
    value = (h @ params.value_w + params.value_b)[:, 0]
    if single:
        mean, value = mean[0], value[0]
    if return_cache:
        return mean, value, ForwardCache(x, activations)
    return mean, value


def backward(
    params: PolicyParams,
    cache: ForwardCache,
    d_mean: np.ndarray,
    d_value: np.ndarray,
    d_log_std: np.ndarray | None = None,
) -> PolicyParams:
    """Batch-mean parameter gradients given per-sample output gradients."""
    d_mean = np.atleast_2d(d_mean)
    d_value = np.asarray(d_value, dtype=np.float64).reshape(-1, 1)
    n = cache.inputs.shape[0]
    h_last = cache.activations[-1]
    grads = params.zeros_like()
    grads.mean_w = h_last.T @ d_mean / n
    grads.mean_b = d_mean.sum(axis=0) / n
    grads.value_w = h_last.T @ d_value / n
    grads.value_b = d_value.sum(axis=0) / n
    if d_log_std is not None:
        grads.log_std = np.atleast_2d(d_log_std).sum(axis=0) / n

    dh = d_mean @ params.mean_w.T + d_value @ params.value_w.T
    for i in reversed(range(len(params.weights))):
        h = cache.activations[i]
        dz = dh * (1.0 - h * h)
        below = cache.activations[i - 1] if i > 0 else cache.inputs
        grads.weights[i] = below.T @ dz / n
        grads.biases[i] = dz.sum(axis=0) / n
        if i > 0:
            dh = dz @ params.weights[i].T
    return grads


def global_norm(grads: PolicyParams) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays()))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: PolicyParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])

    def copy(self) -> "AdamState":
        return AdamState(
            [a.copy() for a in self.m], [a.copy() for a in self.v], self.step, self.beta1, self.beta2, self.eps
        )


def adam_step(params: PolicyParams, adam: AdamState, grads: PolicyParams, lr: float) -> None:
    """In-place bias-corrected Adam update; log-std is clamped afterwards.

    A non-finite gradient leaves both ``params`` and ``adam`` untouched and
    raises :class:`NonFiniteError`.
    """
    grad_arrays = grads.arrays()
    if not all(np.all(np.isfinite(g)) for g in grad_arrays):
        raise NonFiniteError("non-finite gradient; Adam update rejected")
    adam.step += 1
    c1 = 1.0 - adam.beta1**adam.step
    c2 = 1.0 - adam.beta2**adam.step
    for p, g, m, v in zip(params.arrays(), grad_arrays, adam.m, adam.v):
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)
    np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX, out=params.log_std)


# --- checkpoint file -----------------------------------------------------------
#
# Layout (all integers little-endian):
#   8 bytes   magic "QSECCKPT"
#   u32       format version
#   u32       header length H
#   H bytes   UTF-8 JSON header: spec dims, seed, has_adam, adam step/betas, meta
#   float64[] parameter arrays in canonical order (trunk W,b per layer, mean W,b,
#             value W,b, log_std), then Adam m and v in the same order if present
#   32 bytes  SHA-256 of everything above


def checkpoint_bytes(params: PolicyParams, seed: int, adam: AdamState | None = None, meta: dict | None = None) -> bytes:
    header = {
        "input_dim": params.spec.input_dim,
        "hidden": list(params.spec.hidden),
        "action_dim": params.spec.action_dim,
        "seed": int(seed),
        "has_adam": adam is not None,
        "meta": meta or {},
    }
    if adam is not None:
        header.update(adam_step=adam.step, adam_beta1=adam.beta1, adam_beta2=adam.beta2, adam_eps=adam.eps)
    head = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
    buf.write(head)
    arrays = params.arrays() + ((adam.m + adam.v) if adam is not None else [])
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, params: PolicyParams, seed: int, adam: AdamState | None = None, meta: dict | None = None) -> str:
    """Write a checkpoint and return the SHA-256 hex digest of the file."""
    data = checkpoint_bytes(params, seed, adam, meta)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


@dataclass
class Checkpoint:
    params: PolicyParams
    seed: int
    adam: AdamState | None = None
    meta: dict = field(default_factory=dict)
    sha256: str = ""


def read_checkpoint_bytes(data: bytes) -> Checkpoint:
    if len(data) < len(CHECKPOINT_MAGIC) + 8 + 32 or data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: file is truncated or corrupt")
    offset = len(CHECKPOINT_MAGIC)
    version, head_len = struct.unpack_from("<II", body, offset)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset += 8
    header = json.loads(body[offset : offset + head_len].decode())
    offset += head_len
    spec = MlpSpec(header["input_dim"], tuple(header["hidden"]), header["action_dim"])
    template = init(spec, 0)
    shapes = [a.shape for a in template.arrays()]
    n_sets = 3 if header["has_adam"] else 1
    expected = offset + 8 * n_sets * sum(int(np.prod(s)) for s in shapes)
    if expected != len(body):
        raise CheckpointError("payload size does not match the header")

    def take():
        nonlocal offset
        out = []
        for shape in shapes:
            size = int(np.prod(shape))
            out.append(np.frombuffer(body, dtype="<f8", count=size, offset=offset).reshape(shape).astype(np.float64))
            offset += 8 * size
        return out

    params = PolicyParams.from_arrays(spec, take())
    adam = None
    if header["has_adam"]:
        m, v = take(), take()
        adam = AdamState(m, v, header["adam_step"], header["adam_beta1"], header["adam_beta2"], header["adam_eps"])
    return Checkpoint(params, header["seed"], adam, header.get("meta", {}), hashlib.sha256(data).hexdigest())


def load_checkpoint(path) -> Checkpoint:
    return read_checkpoint_bytes(Path(path).read_bytes())
