"""Quadrotor secure-control lab: kinematics, PPO, layered attack/defense environments."""

__version__ = "0.1.0"
