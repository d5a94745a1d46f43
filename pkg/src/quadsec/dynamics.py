"""First-order quadrotor kinematics.

The vehicle is driven through the CTBR interface: a collective-thrust channel
``v`` and three commanded body rates.  Attitude integrates the body rates via
the Euler-rate transform; the inertial velocity is the excess thrust
``v - v_hover`` pointed along the body z-axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

V_MIN = 0.0
V_MAX = 3.5
RATE_LIMIT = math.pi / 3
ANGLE_LIMIT = math.pi / 3
# Open-interval clamp: angles are held just inside +-pi/3.
_ANGLE_EDGE = math.nextafter(ANGLE_LIMIT, 0.0)
_SINGULAR_MARGIN = 1e-6


class InvalidInput(ValueError):
    """Raised for non-finite or out-of-domain inputs."""


class SingularityError(ValueError):
    """Raised when the Euler-rate transform is evaluated near |theta| = pi/2."""


@dataclass(frozen=True)
class PhysicalParams:
    k_lift: float = 1e-5
    b_drag: float = 1e-6
    arm_length: float = 0.15
    mass: float = 0.75
    g: float = 9.81
    v_hover: float = 1.75
    dt: float = 0.02

    def __post_init__(self):
        for name in ("k_lift", "b_drag", "arm_length", "mass", "g", "v_hover", "dt"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInput(f"{name} must be positive, got {value}")
        if not V_MIN < self.v_hover < V_MAX:
            raise InvalidInput(f"v_hover must lie in ({V_MIN}, {V_MAX})")


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned flight box; leaving it (or z < z_min) is a crash."""

    xy_half_width: float = 3.0
    z_min: float = 0.0
    z_max: float = 3.0

    def violation(self, position) -> str | None:
        x, y, z = position
        if z < self.z_min:
            return "ground"
        if abs(x) > self.xy_half_width or abs(y) > self.xy_half_width or z > self.z_max:
            return "workspace"
        return None


def _vec3(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(3)
    return arr


@dataclass(frozen=True)
class QuadrotorState:
    """Pose and rates at one control tick (all arrays are float64, shape (3,))."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    body_rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("position", "orientation", "velocity", "body_rates"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))

    @classmethod
    def at(cls, position, orientation=(0.0, 0.0, 0.0)) -> "QuadrotorState":
        return cls(position=position, orientation=orientation)

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(a))
            for a in (self.position, self.orientation, self.velocity, self.body_rates)
        )

    def __eq__(self, other):
        if not isinstance(other, QuadrotorState):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("position", "orientation", "velocity", "body_rates")
        )

    __hash__ = None


class ControlCommand(NamedTuple):
    v: float
    roll_rate: float
    pitch_rate: float
    yaw_rate: float

    @property
    def rates(self) -> np.ndarray:
        return np.array([self.roll_rate, self.pitch_rate, self.yaw_rate])

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


class StepResult(NamedTuple):
    state: QuadrotorState
    crashed: bool
    crash_cause: str | None
    clamped: tuple[bool, bool, bool]


def _check_finite(*values):
    for value in values:
        ok = math.isfinite(value) if isinstance(value, (float, int)) else np.isfinite(value).all()
        if not ok:
            raise InvalidInput(f"non-finite input: {value!r}")


def rot_elemental(axis: str, angle: float) -> np.ndarray:
    """Elemental rotation about ``axis`` ('x', 'y' or 'z') by ``angle`` radians."""
    _check_finite(angle)
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise InvalidInput(f"unknown axis {axis!r}")


def rot_zyx(phi: float, theta: float, psi: float) -> np.ndarray:
    """Body-to-inertial rotation ``Rz(psi) @ Ry(theta) @ Rx(phi)``, closed form."""
    _check_finite(phi, theta, psi)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp],
            [ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp],
            [-st, sf * ct, cf * ct],
        ]
    )


def angular_transform(phi: float, theta: float) -> np.ndarray:
    """Matrix mapping body rates to Euler-angle rates."""
    _check_finite(phi, theta)
    if abs(theta) >= math.pi / 2 - _SINGULAR_MARGIN:
        raise SingularityError(f"Euler-rate transform singular at theta={theta}")
    cf, sf = math.cos(phi), math.sin(phi)
    ct, tt = math.cos(theta), math.tan(theta)
    return np.array(
        [
            [1.0, sf * tt, cf * tt],
            [0.0, cf, -sf],
            [0.0, sf / ct, cf / ct],
        ]
    )


def frame_velocities(state: QuadrotorState, body_velocity) -> tuple[np.ndarray, np.ndarray]:
    """Return (inertial velocity, Euler-angle rates) for a body-frame velocity."""
    phi, theta, psi = state.orientation
    nu = rot_zyx(phi, theta, psi) @ _vec3(body_velocity)
    euler_rates = angular_transform(phi, theta) @ state.body_rates
    return nu, euler_rates


def motor_mixing(w, params: PhysicalParams) -> tuple[float, float, float, float]:
    """Net z-force and roll/pitch/yaw moments from four rotor speeds (rad/s)."""
    w = np.asarray(w, dtype=np.float64).reshape(4)
    _check_finite(w)
    if np.any(w < 0):
        raise InvalidInput("rotor speeds must be non-negative")
    w1, w2, w3, w4 = w * w
    k, b, l = params.k_lift, params.b_drag, params.arm_length
    f_z = k * (w1 + w2 + w3 + w4) - params.mass * params.g
    roll = l * k * (w2 - w4)
    pitch = l * k * (w1 - w3)
    yaw = b * (w4 + w2 - w1 - w3)
    return float(f_z), float(roll), float(pitch), float(yaw)


_LOWER = (V_MIN, -RATE_LIMIT, -RATE_LIMIT, -RATE_LIMIT)
_UPPER = (V_MAX, RATE_LIMIT, RATE_LIMIT, RATE_LIMIT)


def clamp_command(raw) -> tuple[ControlCommand, bool]:
    """Saturate a raw 4-vector to the actuator bounds; report whether it clipped."""
    raw = np.asarray(raw, dtype=np.float64).reshape(4).tolist()
    _check_finite(*raw)
    clipped = [min(max(r, lo), hi) for r, lo, hi in zip(raw, _LOWER, _UPPER)]
    return ControlCommand(*clipped), clipped != raw


def step(
    state: QuadrotorState,
    cmd: ControlCommand,
    params: PhysicalParams = PhysicalParams(),
    workspace: Workspace = Workspace(),
) -> StepResult:
    """Advance the kinematics by one control period.

    The velocity is evaluated at the current attitude, then position and
    attitude are both integrated with forward Euler.
    """
    assert V_MIN <= cmd.v <= V_MAX, cmd
    assert all(abs(r) <= RATE_LIMIT for r in cmd[1:]), cmd
    dt = params.dt
    phi, theta, psi = state.orientation.tolist()
    rates = np.array(cmd[1:], dtype=np.float64)

    # Third columns of rot_zyx and the Euler-rate transform, written out.
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    if abs(theta) >= math.pi / 2 - _SINGULAR_MARGIN:
        raise SingularityError(f"Euler-rate transform singular at theta={theta}")
    thrust_axis = np.array([cf * st * cp + sf * sp, cf * st * sp - sf * cp, cf * ct])
    velocity = thrust_axis * (cmd.v - params.v_hover)
    p, q, r = cmd[1:]
    euler_rates = np.array([
        p + (sf * q + cf * r) * st / ct,
        cf * q - sf * r,
        (sf * q + cf * r) / ct,
    ])

    raw_angles = state.orientation + euler_rates * dt
    angles = np.clip(raw_angles, -_ANGLE_EDGE, _ANGLE_EDGE)
    clamped = tuple((angles != raw_angles).tolist())
    position = state.position + velocity * dt

    successor = QuadrotorState(position, angles, velocity, rates)
    cause = workspace.violation(position)
    return StepResult(successor, cause is not None, cause, clamped)
