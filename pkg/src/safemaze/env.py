"""Maze environment: a spring-driven peg exploring a walled channel by touch.

Observations expose the simulated force/torque reading (6 values, planar
components only are nonzero) plus, for the task view, the peg position. The
step contract is functional: it consumes a PegState and returns a fresh one,
so instances can replay trajectories deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .contact import ContactWorld
from .controller import Action, ControllerGains, controller_gains
from .errors import ConfigurationError
from .geometry import MazeSpec, validate_maze

WRENCH_DIM = 6
TASK_OBS_DIM = 9


@dataclass(frozen=True)
class EnvConfig:
    peg_radius: float = 0.015
    force_threshold: float = 32.0  # newtons; magnitudes at/above this violate
    substeps: int = 20
    substep_dt: float = 0.05
    zeta: float = 0.707
    plane_height: float = 0.0  # constant pz reported in the task observation
    horizon: int = 500

    def __post_init__(self):
        if self.force_threshold <= 0:
            raise ConfigurationError("force threshold must be positive")
        if self.substeps < 1:
            raise ConfigurationError("substep count must be >= 1")


@dataclass(frozen=True)
class PegState:
    pos: np.ndarray  # (2,) peg center
    obstacle_positions: tuple  # tuple of (2,) arrays


@dataclass(frozen=True)
class TaskObservation:
    wrench: np.ndarray  # (6,) fx fy fz tx ty tz
    px: float
    py: float
    pz: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.wrench, [self.px, self.py, self.pz]])


@dataclass(frozen=True)
class SafetyObservation:
    wrench: np.ndarray

    def vector(self) -> np.ndarray:
        return np.asarray(self.wrench, dtype=float)


@dataclass(frozen=True)
class EpisodeEvents:
    contact: bool = False
    violation: bool = False
    goal_reached: bool = False
    entrance_exit: bool = False
    max_force: float = 0.0
    obstacle_max_force: tuple = ()
    obstacle_moved: tuple = ()


class EpisodeOutcome(Enum):
    RUNNING = "Running"
    SUCCESS = "Success"
    VIOLATION = "Violation"
    ENTRANCE_EXIT = "EntranceExit"
    TIMEOUT = "Timeout"

    def __str__(self) -> str:  # CSV-friendly
        return self.value


# reward constants: distance scale, collision/entrance penalties, goal bonus
C_POS = 100.0
R_COL = -250.0
R_ENT = -500.0
R_GOAL = 1000.0


def reward(obs: TaskObservation, events: EpisodeEvents, spec: MazeSpec) -> float:
    """Dense negative goal distance plus additive event terms."""
    dist = math.hypot(obs.px - spec.goal[0], obs.py - spec.goal[1])
    r = -C_POS * dist
    if events.violation:
        r += R_COL
    if events.entrance_exit:
        r += R_ENT
    if events.goal_reached:
        r += R_GOAL
    return r


def constraint(wrench: np.ndarray, threshold: float) -> int:
    """1 iff the force magnitude reaches the threshold (closed unsafe set)."""
    if threshold <= 0:
        raise ConfigurationError("constraint threshold must be positive")
    f = math.sqrt(float(wrench[0]) ** 2 + float(wrench[1]) ** 2 + float(wrench[2]) ** 2)
    return 1 if f >= threshold else 0


def classify_termination(events: EpisodeEvents, step_count: int, horizon: int) -> EpisodeOutcome:
    """Safety events dominate bookkeeping: Violation > EntranceExit > Success > Timeout."""
    if events.violation:
        return EpisodeOutcome.VIOLATION
    if events.entrance_exit:
        return EpisodeOutcome.ENTRANCE_EXIT
    if events.goal_reached:
        return EpisodeOutcome.SUCCESS
    if step_count >= horizon:
        return EpisodeOutcome.TIMEOUT
    return EpisodeOutcome.RUNNING


class MazeEnv:
    """Quasi-static contact simulation of the peg-in-channel exploration task."""

    def __init__(self, spec: MazeSpec, config: EnvConfig = EnvConfig()):
        validate_maze(spec, config.peg_radius)
        self.spec = spec
        self.config = config
        self.world = ContactWorld(spec, config.peg_radius)

    def reset(self, seed: int | None = None) -> tuple[PegState, TaskObservation]:
        """Peg at the entrance, obstacles at their spec positions, zero wrench.

        The seed is accepted for interface stability; the reset itself is
        deterministic (start randomization, when wanted, is applied by the
        caller through teleport()).
        """
        del seed
        state = PegState(
            pos=self.spec.entrance.copy(),
            obstacle_positions=tuple(ob.center.copy() for ob in self.spec.obstacles),
        )
        return state, self._observe(state.pos, np.zeros(2), 0.0)

    def teleport(self, state: PegState, pos: np.ndarray) -> PegState:
        """Place the peg somewhere explicitly (used by collectors/evaluation)."""
        pos = np.asarray(pos, dtype=float)
        if self.clearance(pos, state) < 0:
            raise ConfigurationError("teleport target overlaps geometry")
        return replace(state, pos=pos)

    def clearance(self, pos: np.ndarray, state: PegState) -> float:
        """Free margin of a peg centered at pos given current obstacle layout."""
        d = float(self.world.wall_gaps(pos, self.config.peg_radius).min())
        for ob, c in zip(self.spec.obstacles, state.obstacle_positions):
            d = min(d, float(np.linalg.norm(pos - c)) - ob.radius - self.config.peg_radius)
        return d

    def _observe(self, pos, force2, tz) -> TaskObservation:
        wrench = np.array([force2[0], force2[1], 0.0, 0.0, 0.0, tz])
        return TaskObservation(
            wrench=wrench, px=float(pos[0]), py=float(pos[1]), pz=self.config.plane_height
        )

    def step(
        self, state: PegState, action: Action, gains: ControllerGains | None = None
    ) -> tuple[PegState, TaskObservation, EpisodeEvents]:
        """Drag the impedance anchor to pos + dp and settle against contacts.

        Raises SimulationError when the solver fails; callers treat that as a
        violation-equivalent episode abort.
        """
        if gains is None:
            gains = controller_gains(action, self.config.zeta)
        res = self.world.resolve_step(
            state.pos,
            state.obstacle_positions,
            action.dp,
            gains.k_star.kx,
            gains.k_star.ky,
            gains.d_star[0],
            gains.d_star[1],
            substeps=self.config.substeps,
            substep_dt=self.config.substep_dt,
        )
        new_state = PegState(pos=res.position, obstacle_positions=tuple(res.obstacle_positions))
        obs = self._observe(res.position, res.force, res.torque_z)
        goal_hit = False
        exited = False
        gx, gy = self.spec.goal
        for q in res.path:  # a long step may sweep through the goal disc
            if math.hypot(q[0] - gx, q[1] - gy) <= self.spec.goal_radius:
                goal_hit = True
            if self.spec.entrance_progress(q) < 0.0:
                exited = True
        events = EpisodeEvents(
            contact=res.any_contact,
            violation=res.max_force >= self.config.force_threshold,
            goal_reached=goal_hit,
            entrance_exit=exited,
            max_force=res.max_force,
            obstacle_max_force=tuple(res.obstacle_max_force),
            obstacle_moved=tuple(res.obstacle_moved),
        )
        return new_state, obs, events
