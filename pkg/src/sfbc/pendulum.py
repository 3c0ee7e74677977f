"""Pendulum swing-up dynamics, reward, and episode rollout.

Matches the standard Pendulum-v1 continuous-control benchmark: torque-limited
rigid rod, semi-implicit Euler integration, quadratic cost on angle, angular
velocity, and torque. Angle convention: theta = 0 is upright, wrapped to
(-pi, pi] after every transition.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

GRAVITY = 10.0
MASS = 1.0
LENGTH = 1.0
TIMESTEP = 0.05
MAX_SPEED = 8.0
MAX_TORQUE = 2.0

# Worst-case single-step cost: theta at pi, omega at the speed clamp,
# torque at the clamp.
REWARD_LOWER_BOUND = -(math.pi**2 + 0.1 * MAX_SPEED**2 + 0.001 * MAX_TORQUE**2)


class State(NamedTuple):
    """Pendulum state: angle from upright (radians) and angular velocity."""

    theta: float
    omega: float


class Rollout(NamedTuple):
    """Arrays recorded over one episode; index t holds (s_t, a_t, r_t)."""

    thetas: np.ndarray
    omegas: np.ndarray
    torques: np.ndarray
    rewards: np.ndarray
    final_state: State

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())


def wrap_angle(x: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    return math.pi - (math.pi - x) % (2.0 * math.pi)


def wrap_angles(x: np.ndarray) -> np.ndarray:
    """Vectorized `wrap_angle`."""
    return np.pi - np.mod(np.pi - np.asarray(x), 2.0 * np.pi)


def clamp_torque(u: float) -> float:
    return min(max(u, -MAX_TORQUE), MAX_TORQUE)


def mechanical_energy(s: State) -> float:
    """Kinetic plus potential energy of the rod, zero at the pivot height."""
    # Rod of mass m, length l pivoted at one end: I = m l^2 / 3, CoM at l/2.
    kinetic = 0.5 * (MASS * LENGTH**2 / 3.0) * s.omega**2
    potential = MASS * GRAVITY * (LENGTH / 2.0) * math.cos(s.theta)
    return kinetic + potential


def step(s: State, torque: float, dt: float = TIMESTEP) -> tuple[State, float]:
    """Advance one step; returns (successor, reward at the pre-step state)."""
    if not (math.isfinite(s.theta) and math.isfinite(s.omega)):
        raise ValueError(f"non-finite state {s!r}: corrupted data")
    if not math.isfinite(torque):
        raise ValueError(f"non-finite torque {torque!r}: corrupted data")
    if not dt > 0:
        raise ValueError(f"timestep must be positive, got {dt}")

    u = clamp_torque(torque)
    theta_n = wrap_angle(s.theta)
    cost = theta_n**2 + 0.1 * s.omega**2 + 0.001 * u**2

    new_omega = s.omega + (
        3.0 * GRAVITY / (2.0 * LENGTH) * math.sin(s.theta)
        + 3.0 / (MASS * LENGTH**2) * u
    ) * dt
    new_omega = min(max(new_omega, -MAX_SPEED), MAX_SPEED)
    new_theta = wrap_angle(s.theta + new_omega * dt)
    return State(new_theta, new_omega), -cost


Policy = Callable[[State], float]


def rollout(policy: Policy, initial: State, horizon: int) -> Rollout:
    """Run a deterministic policy for `horizon` steps from `initial`.

    Deterministic given (policy, initial): replaying with an identical policy
    reproduces the trajectory bit for bit.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    thetas = np.empty(horizon, dtype=np.float64)
    omegas = np.empty(horizon, dtype=np.float64)
    torques = np.empty(horizon, dtype=np.float64)
    rewards = np.empty(horizon, dtype=np.float64)
    s = initial
    for t in range(horizon):
        u = float(policy(s))
        if not math.isfinite(u):
            raise ValueError(f"policy emitted non-finite torque at step {t}: rollout aborted")
        thetas[t] = s.theta
        omegas[t] = s.omega
        torques[t] = clamp_torque(u)
        s, r = step(s, u)
        rewards[t] = r
    return Rollout(thetas, omegas, torques, rewards, s)
