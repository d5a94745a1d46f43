"""
Flying the kinematic quadrotor by hand
======================================

The simulator is first order: the commanded collective ``v`` sets a speed
along the body thrust axis, measured relative to the hover value 1.75, and
the three body rates turn the attitude.  This script steers it with a few
hand-written command sequences so the consequences are easy to see.
"""

# %%
import math

import numpy as np

from quadsec import dynamics as dyn

HOVER = dyn.ControlCommand(1.75, 0.0, 0.0, 0.0)
state = dyn.QuadrotorState.at((0.0, 0.0, 1.0))


def fly(state, commands):
    for cmd in commands:
        state = dyn.step(state, cmd).state
    return state


# %%
# Hover is an exact fixed point: nothing moves at v = 1.75 with zero rates.
print("hover for 1 s:", fly(state, [HOVER] * 50).position)

# %%
# Raising v climbs straight up while the vehicle is level.
print("climb for 1 s:", fly(state, [dyn.ControlCommand(2.75, 0.0, 0.0, 0.0)] * 50).position)

# %%
# Tilting alone does not translate the vehicle; the excess thrust does.
# Roll for half a second, then push v above hover.
roll = [dyn.ControlCommand(1.75, 0.6, 0.0, 0.0)] * 25
push = [dyn.ControlCommand(2.75, 0.0, 0.0, 0.0)] * 50
tilted = fly(state, roll)
print("after rolling:", tilted.position, "roll angle", round(tilted.orientation[0], 3))
print("then pushing:", fly(tilted, push).position)

# %%
# Because velocity always points along the thrust axis, a purely horizontal
# move needs a zig-zag: climb while tilted one way, descend while tilted the
# other.  With attitude limited to pi/3 the steepest direct path is 60 degrees
# from vertical.
zig = roll + [dyn.ControlCommand(2.75, 0.0, 0.0, 0.0)] * 25
zag = [dyn.ControlCommand(1.75, -0.6, 0.0, 0.0)] * 50 + [dyn.ControlCommand(0.75, 0.0, 0.0, 0.0)] * 25
print("zig-zag:", np.round(fly(state, zig + zag).position, 3))

# %%
# Commands are saturated before they reach the vehicle.
print(dyn.clamp_command([5.0, 2.0, -2.0, 0.0]))
print("rate limit", round(dyn.RATE_LIMIT, 4), "= pi/3", round(math.pi / 3, 4))
