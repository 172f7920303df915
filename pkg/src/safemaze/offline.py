"""Scripted probing that teaches the notion of risk before any task learning.

The peg is teleported to one of six predefined interior points (with position
noise), pushed once in a random direction with random move size and stiffness,
and the resulting transition is recorded with its binary constraint label. No
reward is collected: the dataset separates constraint learning from task
learning.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .agents import DP_MAX, K_MAX, K_MIN, ActionMapper
from .controller import controller_gains
from .env import MazeEnv
from .errors import ConfigurationError, SimulationError
from .geometry import probe_points as default_probe_points

DATASET_STATE_DIM = 6
DATASET_ACTION_DIM = 4


@dataclass(frozen=True)
class CollectorConfig:
    probe_points: np.ndarray  # (6, 2) interior points
    position_noise_std: float = 0.005
    n_transitions: int = 8000
    seed: int = 0
    max_retries: int = 50

    def __post_init__(self):
        pts = np.asarray(self.probe_points, dtype=float)
        if pts.shape != (6, 2):
            raise ConfigurationError("collector needs exactly six 2-D probe points")
        if self.n_transitions < 1:
            raise ConfigurationError("n_transitions must be >= 1")

    @classmethod
    def for_maze(cls, spec, **kwargs) -> "CollectorConfig":
        return cls(probe_points=default_probe_points(spec, 6), **kwargs)


@dataclass
class OfflineDataset:
    """Cost-labeled transitions with raw (unscaled) wrench states."""

    states: np.ndarray  # (n, 6) wrench before the move
    actions: np.ndarray  # (n, 4) normalized action
    costs: np.ndarray  # (n,) binary constraint labels
    next_states: np.ndarray  # (n, 6) wrench after the move
    dones: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def n_violations(self) -> int:
        return int(np.sum(self.costs >= 0.5))

    @property
    def n_safe(self) -> int:
        return len(self) - self.n_violations

    def __eq__(self, other) -> bool:
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("states", "actions", "costs", "next_states", "dones")
        )

    def save(self, path, config_hash: str = "") -> None:
        from .replay import write_record_stream

        write_record_stream(
            path, self.states, self.actions, self.costs, self.next_states, self.dones,
            config_hash=config_hash,
        )

    @classmethod
    def load(cls, path) -> "OfflineDataset":
        from .replay import read_record_stream

        states, actions, costs, next_states, dones, _ = read_record_stream(path)
        if len(states) and (states.shape[1] != DATASET_STATE_DIM
                            or actions.shape[1] != DATASET_ACTION_DIM):
            raise ConfigurationError(
                f"offline dataset must be {DATASET_STATE_DIM}/{DATASET_ACTION_DIM} dimensional"
            )
        return cls(states=states, actions=actions, costs=costs,
                   next_states=next_states, dones=dones)

    def to_csv(self, path, config_hash: str = "") -> None:
        header = (
            [f"f{ax}" for ax in "xyz"] + [f"t{ax}" for ax in "xyz"]
            + ["dpx_n", "dpy_n", "kx_n", "ky_n", "cost"]
            + [f"next_f{ax}" for ax in "xyz"] + [f"next_t{ax}" for ax in "xyz"]
            + ["done"]
        )
        with open(path, "w", newline="") as fh:
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self)):
                writer.writerow(
                    list(self.states[i]) + list(self.actions[i]) + [int(self.costs[i])]
                    + list(self.next_states[i]) + [int(self.dones[i])]
                )


def collect(config: CollectorConfig, env: MazeEnv, with_diagnostics: bool = False):
    """Run the scripted probing routine and return the labeled dataset.

    Every probe resets the maze, jitters one of the six points (resampling
    noise while the peg would overlap geometry), then executes a single
    random push: direction uniform on [0, 360) degrees, move size uniform in
    the displacement range, stiffness uniform in its sample box.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_transitions
    states = np.zeros((n, DATASET_STATE_DIM))
    actions = np.zeros((n, DATASET_ACTION_DIM))
    costs = np.zeros(n)
    next_states = np.zeros((n, DATASET_STATE_DIM))
    dones = np.zeros(n)
    max_forces = np.zeros(n)
    mapper = ActionMapper()

    base_state, _ = env.reset()
    for i in range(n):
        point = np.asarray(config.probe_points[i % 6], dtype=float)
        state = None
        for _ in range(config.max_retries):
            candidate = point + rng.normal(0.0, config.position_noise_std, 2)
            if env.clearance(candidate, base_state) >= 0.0:
                state = env.teleport(base_state, candidate)
                break
        if state is None:
            raise ConfigurationError(
                f"probe point {i % 6} at {point} stayed infeasible after "
                f"{config.max_retries} noise draws"
            )
        angle = rng.uniform(0.0, 2.0 * math.pi)
        # move size spans the admissible box along this direction, so corner
        # actions (both components at full range) are represented too
        move_cap = DP_MAX / max(abs(math.cos(angle)), abs(math.sin(angle)))
        move = rng.uniform(0.0, move_cap)
        kx, ky = rng.uniform(K_MIN, K_MAX, 2)
        a_norm = np.array(
            [
                move * math.cos(angle) / DP_MAX,
                move * math.sin(angle) / DP_MAX,
                ActionMapper.normalized_k(kx),
                ActionMapper.normalized_k(ky),
            ]
        )
        action = mapper.denormalize(a_norm)
        try:
            _, obs2, events = env.step(state, action, controller_gains(action, env.config.zeta))
            violated = events.violation
            next_wrench = obs2.wrench
            max_forces[i] = events.max_force
        except SimulationError:
            # solver breakdown counts as a violation-equivalent sample
            violated = True
            next_wrench = np.zeros(DATASET_STATE_DIM)
            max_forces[i] = math.inf
        actions[i] = a_norm
        costs[i] = 1.0 if violated else 0.0
        next_states[i] = next_wrench
        dones[i] = 1.0 if violated else 0.0

    dataset = OfflineDataset(states=states, actions=actions, costs=costs,
                             next_states=next_states, dones=dones)
    if with_diagnostics:
        return dataset, {"max_forces": max_forces}
    return dataset
