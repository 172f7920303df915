"""Variable impedance controller utilities.

The policy emits a desired planar displacement and a pair of axis stiffness
gains. Before actuation the gains are projected onto the motion direction,
and damping follows the double-diagonal rule d = 2*zeta*sqrt(k) per axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

DEFAULT_ZETA = 0.707
ZERO_MOTION_EPS = 1e-9  # below this displacement norm the projection is skipped


@dataclass(frozen=True)
class StiffnessGains:
    """Axis stiffness in N/m; strictly positive."""

    kx: float
    ky: float

    def __post_init__(self):
        if not (self.kx > 0 and self.ky > 0):
            raise ConfigurationError(f"stiffness must be positive, got ({self.kx}, {self.ky})")

    def as_array(self) -> np.ndarray:
        return np.array([self.kx, self.ky], dtype=float)


@dataclass(frozen=True)
class Action:
    """One actuation command: desired displacement plus stiffness gains."""

    dp: np.ndarray  # (2,) meters, relative to the current peg position
    k: StiffnessGains


@dataclass(frozen=True)
class ControllerGains:
    """Projected gains handed to the contact solver."""

    k_star: StiffnessGains
    d_star: np.ndarray  # (2,) N*s/m
    zeta: float


def damping_from_stiffness(k: StiffnessGains, zeta: float = DEFAULT_ZETA) -> np.ndarray:
    """Per-axis damping via the double-diagonal rule d_i = 2*zeta*sqrt(k_i)."""
    if not (0.0 < zeta <= 2.0):
        raise ConfigurationError(f"damping ratio must be in (0, 2], got {zeta}")
    if not (k.kx > 0 and k.ky > 0):
        raise ConfigurationError("stiffness must be positive")
    return np.array([2.0 * zeta * math.sqrt(k.kx), 2.0 * zeta * math.sqrt(k.ky)])


def project_stiffness(action: Action) -> StiffnessGains:
    """Project the commanded gains onto the motion direction.

    With u = dp/||dp||:
        kx* = |kx*ux| + |ky*(-uy)|
        ky* = |kx*uy| + |ky*ux|
    A zero displacement keeps the gains unchanged (no direction to project on).
    """
    norm = float(np.linalg.norm(action.dp))
    if norm < ZERO_MOTION_EPS:
        return action.k
    ux = float(action.dp[0]) / norm
    uy = float(action.dp[1]) / norm
    kx, ky = action.k.kx, action.k.ky
    return StiffnessGains(
        kx=abs(kx * ux) + abs(ky * -uy),
        ky=abs(kx * uy) + abs(ky * ux),
    )


def controller_gains(action: Action, zeta: float = DEFAULT_ZETA) -> ControllerGains:
    """Projected stiffness plus matching damping for one actuation step."""
    k_star = project_stiffness(action)
    return ControllerGains(k_star=k_star, d_star=damping_from_stiffness(k_star, zeta), zeta=zeta)


def impedance_force(
    pose_error: np.ndarray, velocity_error: np.ndarray, gains: ControllerGains
) -> np.ndarray:
    """Spring-damper force F = D*.vel_err + K*.pose_err, per axis."""
    k = gains.k_star.as_array()
    return gains.d_star * np.asarray(velocity_error, dtype=float) + k * np.asarray(
        pose_error, dtype=float
    )
