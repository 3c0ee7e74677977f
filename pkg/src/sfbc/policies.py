"""Scripted controllers used to assemble the mixed demonstration dataset.

The expert stabilizes the pendulum upright: a PD law near the top, an
energy-regulating bang-bang swing-up elsewhere. The failure controller is a
PD law toward the hanging position, so it consistently drives the pendulum
downward.
"""

from __future__ import annotations

import math

from .pendulum import GRAVITY, LENGTH, MASS, MAX_TORQUE, State, clamp_torque, mechanical_energy, wrap_angle

KP = 8.0
KD = 2.0

# PD capture region around upright; outside it the expert pumps energy.
CATCH_ANGLE = 0.3

# Upright rest energy is m*g*l/2; a small excess lets the rod coast into the
# capture region with usable momentum instead of stalling just below it.
UPRIGHT_ENERGY = MASS * GRAVITY * LENGTH / 2.0
ENERGY_TARGET = UPRIGHT_ENERGY * 1.02

EXPERT_POLICY_ID = "expert-pd-energy-v1"
FAILURE_POLICY_ID = "failure-pd-down-v1"


def _bang(x: float) -> float:
    # sign(0) resolves to +1 so the controller escapes exact rest states.
    return MAX_TORQUE if x >= 0.0 else -MAX_TORQUE


def expert_policy(s: State) -> float:
    """Swing up and balance: PD near upright, energy pumping otherwise."""
    theta = wrap_angle(s.theta)
    if abs(theta) < CATCH_ANGLE:
        return clamp_torque(-KP * theta - KD * s.omega)
    # Torque power is u * omega, so driving with the sign of
    # omega * (target - E) pushes the energy toward the target.
    return _bang(s.omega * (ENERGY_TARGET - mechanical_energy(s)))


def failure_policy(s: State) -> float:
    """Drive toward hanging (theta = pi) with a damped PD law."""
    err = wrap_angle(s.theta - math.pi)
    return clamp_torque(-KP * err - KD * s.omega)
