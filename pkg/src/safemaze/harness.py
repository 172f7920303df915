"""Experiment orchestration: pretraining, online training, evaluation, probes.

A run directory receives delimited logs (episodes, per-step decisions,
optional trajectories), checkpoints and the maze description. Repeating any
entry point with an identical configuration and seed reproduces every output
file byte for byte; wall-clock timings are reported on stdout only for that
reason.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import reports
from .agents import (
    ActionMapper,
    GateConfig,
    MazeAgent,
    ObservationScaler,
    OuNoise,
    apply_ou_noise,
    resolve_method,
)
from .controller import controller_gains
from .env import EnvConfig, EpisodeOutcome, MazeEnv, classify_termination, reward
from .errors import ConfigurationError, NumericalError, SimulationError
from .geometry import default_maze, load_maze, save_maze
from .nn import load_checkpoint, save_checkpoint
from .offline import CollectorConfig, OfflineDataset, collect
from .replay import ReplayBuffer

OUTPUT_ROOT_ENV = "SAFEMAZE_OUT"


@dataclass(frozen=True)
class ExperimentConfig:
    """Full experiment description; defaults follow the reference protocol."""

    method: str = "SRL-VIC"
    episodes: int = 1500
    horizon: int = 500
    updates_per_step: int = 10
    batch_size: int = 256
    pretrain_updates: int = 10000
    gamma: float = 0.9
    gamma_risk: float = 0.65
    epsilon_risk: float = 0.7
    force_threshold: float = 32.0
    seed: int = 0
    ou_noise: bool = False
    ou_theta: float = 0.15
    ou_sigma: float = 0.05
    ou_dt: float = 1.0
    maze: str = "desk"  # "desk", "full", or a path to a maze JSON
    hidden: tuple = (256, 256)
    lr: float = 3e-4
    tau: float = 0.005
    buffer_capacity: int = 500_000
    start_steps: int = 1000
    n_offline: int = 8000
    probe_noise_std: float = 0.005
    goal_radius: float = 0.015
    log_trajectories: bool = False
    eval_episodes: int = 50
    eval_start_noise: float = 0.005

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @classmethod
    def desk(cls, **overrides) -> "ExperimentConfig":
        """Reduced-scale preset sized for a single laptop core.

        Smaller networks and batches keep the end-to-end comparison within
        its runtime budget; every protocol constant (horizon, update cadence,
        discounts, gate) keeps its full-scale value.
        """
        base = dict(episodes=500, hidden=(48, 48), batch_size=64, n_offline=8000,
                    maze="desk", start_steps=800)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper_scale(cls, **overrides) -> "ExperimentConfig":
        base = dict(episodes=1500, hidden=(256, 256), batch_size=256, n_offline=40018,
                    maze="full", start_steps=1000)
        base.update(overrides)
        return cls(**base)

    def config_hash(self) -> str:
        payload = dataclasses.asdict(self)
        payload["hidden"] = list(self.hidden)
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def validate(self) -> None:
        resolve_method(self.method)
        if self.episodes < 0 or self.horizon < 1:
            raise ConfigurationError("episodes must be >= 0 and horizon >= 1")
        if not (0 < self.gamma < 1 and 0 < self.gamma_risk < 1 and 0 < self.epsilon_risk < 1):
            raise ConfigurationError("discounts and the risk gate must lie in (0, 1)")
        if self.batch_size < 1 or self.updates_per_step < 0:
            raise ConfigurationError("batch size must be >= 1, updates_per_step >= 0")
        if self.force_threshold <= 0:
            raise ConfigurationError("force threshold must be positive")


def load_experiment_config(path) -> dict:
    """Key-value JSON config file; returns the raw overrides dict."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config file must hold a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if "hidden" in data:
        data["hidden"] = tuple(int(w) for w in data["hidden"])
    return data


def build_maze(config: ExperimentConfig):
    if config.maze in ("desk", "full"):
        spec = default_maze(config.maze)
    else:
        spec = load_maze(config.maze)
    if config.goal_radius != spec.goal_radius:
        spec = replace(spec, goal_radius=config.goal_radius)
    return spec


def build_env(config: ExperimentConfig) -> MazeEnv:
    return MazeEnv(
        build_maze(config),
        EnvConfig(force_threshold=config.force_threshold, horizon=config.horizon),
    )


def make_scaler(config: ExperimentConfig, spec) -> ObservationScaler:
    return ObservationScaler(
        force_scale=config.force_threshold, position_scale=max(spec.length_along_path, 1e-9)
    )


def build_agent(config: ExperimentConfig) -> MazeAgent:
    return MazeAgent(
        resolve_method(config.method),
        GateConfig(epsilon_risk=config.epsilon_risk, gamma_risk=config.gamma_risk),
        hidden=config.hidden,
        lr=config.lr,
        tau=config.tau,
        gamma=config.gamma,
        seed=int(np.random.SeedSequence([config.seed, 101]).generate_state(1)[0]),
    )


@dataclass
class RunMetrics:
    """Per-episode records plus cumulative counters for one training run."""

    episodes: list = field(default_factory=list)
    successes: int = 0
    violations: int = 0
    entrance_exits: int = 0
    timeouts: int = 0
    wall_clock: float = 0.0

    def record(self, episode, steps, ep_return, outcome, max_force):
        if outcome is EpisodeOutcome.SUCCESS:
            self.successes += 1
        elif outcome is EpisodeOutcome.VIOLATION:
            self.violations += 1
        elif outcome is EpisodeOutcome.ENTRANCE_EXIT:
            self.entrance_exits += 1
        elif outcome is EpisodeOutcome.TIMEOUT:
            self.timeouts += 1
        self.episodes.append(
            {
                "episode": episode,
                "steps": steps,
                "return": ep_return,
                "outcome": str(outcome),
                "max_force": max_force,
                "cum_successes": self.successes,
                "cum_violations": self.violations,
                "cum_entrance_exits": self.entrance_exits,
                "cum_timeouts": self.timeouts,
                "ratio": self.ratio,
            }
        )

    @property
    def ratio(self) -> float:
        # guarded denominator keeps the metric finite at zero violations
        return self.successes / max(1, self.violations)

    def rows(self):
        cols = ["episode", "steps", "return", "outcome", "max_force", "cum_successes",
                "cum_violations", "cum_entrance_exits", "cum_timeouts", "ratio"]
        return cols, [[e[c] for c in cols] for e in self.episodes]


def run_collect(config: ExperimentConfig, out_dir, csv_copy=False) -> str:
    """Scripted offline data collection into out_dir/dataset.smrs."""
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    env = build_env(config)
    collector = CollectorConfig.for_maze(
        env.spec,
        n_transitions=config.n_offline,
        seed=config.seed,
        position_noise_std=config.probe_noise_std,
    )
    dataset = collect(collector, env)
    path = os.path.join(out_dir, "dataset.smrs")
    dataset.save(path, config_hash=config.config_hash())
    if csv_copy:
        dataset.to_csv(os.path.join(out_dir, "dataset.csv"), config_hash=config.config_hash())
    print(
        f"collected {len(dataset)} transitions "
        f"({dataset.n_violations} violating, {dataset.n_safe} safe) -> {path}"
    )
    return path


def run_pretrain(config: ExperimentConfig, dataset_path, out_dir) -> str:
    """Alternating risk-critic / recovery updates on the offline dataset."""
    config.validate()
    if not os.path.exists(dataset_path):
        raise ConfigurationError(f"offline dataset not found: {dataset_path}")
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    dataset = OfflineDataset.load(dataset_path)
    spec = build_maze(config)
    scaler = make_scaler(config, spec)

    agent = build_agent(config)
    if agent.safety is None:
        raise ConfigurationError(f"method {config.method} has no safety networks to pretrain")
    n = len(dataset)
    if n == 0:
        raise ConfigurationError("offline dataset is empty")
    buf = ReplayBuffer(max(n, 1), 6, 4, dtype=np.float32)
    buf.extend(
        dataset.states / scaler.force_scale,
        dataset.actions,
        dataset.costs,
        dataset.next_states / scaler.force_scale,
        dataset.dones,
    )
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 202]))
    batch = min(config.batch_size, n)
    losses = []
    for step in range(config.pretrain_updates):
        sample = buf.sample(rng, batch)
        next_a = agent.recovery.act(sample["next_states"], use_target=True)
        closs = agent.safety.update(sample, next_a, config.gamma_risk)
        rloss = agent.recovery.update(sample["states"], agent.safety)
        if not (math.isfinite(closs) and math.isfinite(rloss)):
            raise NumericalError(f"non-finite pretraining loss at update {step}")
        if step % 100 == 0 or step == config.pretrain_updates - 1:
            losses.append([step, closs, rloss])
    ckpt = os.path.join(out_dir, "pretrain.npz")
    save_checkpoint(
        ckpt,
        {
            "safety": agent.safety.net,
            "safety_target": agent.safety.target,
            "recovery": agent.recovery.net,
            "recovery_target": agent.recovery.target,
        },
        scalars={"pretrain_updates": config.pretrain_updates},
        meta={"config_hash": config.config_hash()},
    )
    reports.write_csv(
        os.path.join(out_dir, "pretrain_losses.csv"),
        ["update", "critic_loss", "recovery_mean_risk"],
        losses,
        config_hash=config.config_hash(),
    )
    print(f"pretraining done in {time.perf_counter() - t0:.1f}s -> {ckpt}")
    return ckpt


def _load_pretrained(agent: MazeAgent, path) -> None:
    nets, _, _ = load_checkpoint(path)
    for name in ("safety", "safety_target", "recovery", "recovery_target"):
        if name not in nets:
            raise ConfigurationError(f"pretrain checkpoint {path} lacks net {name!r}")
    try:
        agent.safety.net.copy_from(nets["safety"])
        agent.safety.target.copy_from(nets["safety_target"])
        agent.recovery.net.copy_from(nets["recovery"])
        agent.recovery.target.copy_from(nets["recovery_target"])
    except ValueError as exc:
        raise ConfigurationError(f"pretrain checkpoint does not match config: {exc}") from exc


def _save_run_checkpoint(path, agent: MazeAgent, config: ExperimentConfig) -> None:
    nets = {
        "policy": agent.sac.policy.net,
        "q1": agent.sac.q1,
        "q2": agent.sac.q2,
        "q1_target": agent.sac.q1_target,
        "q2_target": agent.sac.q2_target,
    }
    if agent.safety is not None:
        nets.update(
            safety=agent.safety.net,
            safety_target=agent.safety.target,
            recovery=agent.recovery.net,
            recovery_target=agent.recovery.target,
        )
    save_checkpoint(
        path,
        nets,
        scalars={"log_alpha": agent.sac.log_alpha},
        meta={"method": config.method, "config_hash": config.config_hash()},
    )


def load_agent_checkpoint(config: ExperimentConfig, path) -> MazeAgent:
    agent = build_agent(config)
    nets, scalars, meta = load_checkpoint(path)
    if meta.get("method") and meta["method"] != config.method:
        raise ConfigurationError(
            f"checkpoint was trained with method {meta['method']}, config says {config.method}"
        )
    try:
        agent.sac.policy.net.copy_from(nets["policy"])
        agent.sac.q1.copy_from(nets["q1"])
        agent.sac.q2.copy_from(nets["q2"])
        agent.sac.q1_target.copy_from(nets["q1_target"])
        agent.sac.q2_target.copy_from(nets["q2_target"])
        if agent.safety is not None:
            agent.safety.net.copy_from(nets["safety"])
            agent.safety.target.copy_from(nets["safety_target"])
            agent.recovery.net.copy_from(nets["recovery"])
            agent.recovery.target.copy_from(nets["recovery_target"])
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"checkpoint {path} does not match the configuration: {exc}")
    agent.sac.log_alpha = scalars.get("log_alpha", agent.sac.log_alpha)
    return agent


class _NoiseStream:
    """Optional OU perturbation of the scaled task observation."""

    def __init__(self, config: ExperimentConfig, rng):
        self.enabled = config.ou_noise
        self.rng = rng
        self.noise = OuNoise(9, theta=config.ou_theta, sigma=config.ou_sigma, dt=config.ou_dt)

    def reset(self):
        self.noise.reset()

    def __call__(self, task_vec):
        if not self.enabled:
            return task_vec
        return apply_ou_noise(task_vec, self.noise, self.rng)


def run_train(config: ExperimentConfig, out_dir, pretrain_path=None) -> RunMetrics:
    """Online training of one method for config.episodes episodes."""
    config.validate()
    method = resolve_method(config.method)
    os.makedirs(out_dir, exist_ok=True)
    t_start = time.perf_counter()
    env = build_env(config)
    spec = env.spec
    scaler = make_scaler(config, spec)
    agent = build_agent(config)
    if method.gated:
        if pretrain_path is None:
            raise ConfigurationError(f"method {config.method} requires a pretrained checkpoint")
        _load_pretrained(agent, pretrain_path)
    mapper = ActionMapper()

    ss = np.random.SeedSequence([config.seed, 303])
    rng_act, rng_update, rng_noise = (np.random.default_rng(k) for k in ss.spawn(3))
    noise = _NoiseStream(config, rng_noise)

    task_buf = ReplayBuffer(config.buffer_capacity, 9, method.policy_action_dim,
                            dtype=np.float32)
    safety_buf = (
        ReplayBuffer(config.buffer_capacity, 6, 4, extra_dim=9, dtype=np.float32)
        if method.gated
        else None
    )

    metrics = RunMetrics()
    decision_rows = []
    traj_rows = []
    hash_ = config.config_hash()
    global_step = 0
    solver_failures = 0

    for episode in range(config.episodes):
        state, obs = env.reset(seed=config.seed)
        noise.reset()
        task_vec = noise(scaler.task_vector(obs))
        ep_return = 0.0
        ep_max_force = 0.0
        outcome = EpisodeOutcome.RUNNING
        steps = 0
        for t in range(config.horizon):
            safety_vec = task_vec[:6]
            proposal = None
            if global_step < config.start_steps:
                proposal = rng_act.uniform(-1.0, 1.0, method.policy_action_dim)
            decision = agent.select(task_vec, safety_vec, rng_act, proposal=proposal)
            action = mapper.denormalize(decision.action)
            gains = controller_gains(action)
            try:
                state, obs2, events = env.step(state, action, gains)
                solver_ok = True
            except SimulationError:
                solver_failures += 1
                solver_ok = False
                obs2 = obs
                events = None
            steps = t + 1
            global_step += 1
            if solver_ok:
                r = reward(obs2, events, spec)
                cost = 1.0 if events.violation else 0.0
                ep_max_force = max(ep_max_force, events.max_force)
                outcome = classify_termination(events, steps, config.horizon)
            else:
                # solver breakdown ends the episode as a violation-equivalent
                from .env import EpisodeEvents

                events = EpisodeEvents(violation=True, max_force=math.inf)
                r = reward(obs2, events, spec)
                cost = 1.0
                outcome = EpisodeOutcome.VIOLATION
            ep_return += r
            next_task_vec = noise(scaler.task_vector(obs2))
            done = outcome in (
                EpisodeOutcome.VIOLATION,
                EpisodeOutcome.SUCCESS,
                EpisodeOutcome.ENTRANCE_EXIT,
            )
            stored_action = (
                decision.action if method.learn_stiffness else decision.action[:2]
            )
            task_buf.push(task_vec, stored_action, r, next_task_vec, done)
            if safety_buf is not None:
                safety_buf.push(
                    safety_vec, decision.action, cost, next_task_vec[:6], done,
                    extra_next=next_task_vec,
                )
            decision_rows.append(
                [global_step, episode, decision.risk, decision.source, int(cost)]
            )
            if config.log_trajectories:
                traj_rows.append(
                    [
                        global_step,
                        obs2.px,
                        obs2.py,
                        obs2.wrench[0],
                        obs2.wrench[1],
                        obs2.wrench[5],
                        gains.k_star.kx,
                        gains.k_star.ky,
                        action.dp[0],
                        action.dp[1],
                        decision.risk,
                        str(outcome),
                    ]
                )

            for _ in range(config.updates_per_step):
                if len(task_buf) >= config.batch_size:
                    stats = agent.sac.update(task_buf.sample(rng_update, config.batch_size),
                                             rng_update)
                    if not all(math.isfinite(v) for v in stats.values()):
                        _dump_diagnostics(out_dir, config, episode, global_step, stats)
                        raise NumericalError(
                            f"non-finite task update at step {global_step}: {stats}"
                        )
                if safety_buf is not None and len(safety_buf) >= config.batch_size:
                    sbatch = safety_buf.sample(rng_update, config.batch_size)
                    next_prop, _, _ = agent.sac.policy.sample(sbatch["extra_next"], rng_update)
                    if method.learn_stiffness:
                        next_full = next_prop
                    else:
                        k_norm = ActionMapper.normalized_k(method.pinned_k)
                        next_full = np.concatenate(
                            [next_prop, np.full((next_prop.shape[0], 2), k_norm)], axis=1
                        )
                    closs = agent.safety.update(sbatch, next_full, config.gamma_risk)
                    rloss = agent.recovery.update(sbatch["states"], agent.safety)
                    if not (math.isfinite(closs) and math.isfinite(rloss)):
                        _dump_diagnostics(out_dir, config, episode, global_step,
                                          {"safety": closs, "recovery": rloss})
                        raise NumericalError(
                            f"non-finite safety update at step {global_step}"
                        )

            task_vec = next_task_vec
            obs = obs2
            if outcome is not EpisodeOutcome.RUNNING:
                break
        if outcome is EpisodeOutcome.RUNNING:
            outcome = EpisodeOutcome.TIMEOUT
        metrics.record(episode, steps, ep_return, outcome, ep_max_force)

    metrics.wall_clock = time.perf_counter() - t_start
    header, rows = metrics.rows()
    reports.write_csv(os.path.join(out_dir, "episodes.csv"), header, rows, config_hash=hash_)
    reports.write_csv(
        os.path.join(out_dir, "decisions.csv"),
        ["step", "episode", "risk", "source", "violation"],
        decision_rows,
        config_hash=hash_,
    )
    if config.log_trajectories:
        reports.write_csv(
            os.path.join(out_dir, "trajectory.csv"),
            TRAJECTORY_COLUMNS,
            traj_rows,
            config_hash=hash_,
        )
    save_maze(spec, os.path.join(out_dir, "maze.json"))
    _save_run_checkpoint(os.path.join(out_dir, "checkpoint.npz"), agent, config)
    summary = {
        "method": config.method,
        "seed": config.seed,
        "episodes": config.episodes,
        "successes": metrics.successes,
        "violations": metrics.violations,
        "entrance_exits": metrics.entrance_exits,
        "timeouts": metrics.timeouts,
        "ratio": metrics.ratio,
        "solver_failures": solver_failures,
        "config_hash": hash_,
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(
        f"[{config.method} seed={config.seed}] {config.episodes} episodes in "
        f"{metrics.wall_clock:.1f}s: {metrics.successes} successes, "
        f"{metrics.violations} violations, ratio {metrics.ratio:.2f}"
    )
    return metrics


TRAJECTORY_COLUMNS = [
    "step", "px", "py", "fx", "fy", "tz", "Kx_star", "Ky_star", "dPx", "dPy", "risk", "outcome",
]


def _dump_diagnostics(out_dir, config, episode, step, stats) -> None:
    path = os.path.join(out_dir, "diagnostics.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "episode": episode,
                "step": step,
                "stats": {k: repr(v) for k, v in stats.items()},
                "config_hash": config.config_hash(),
            },
            fh,
            indent=2,
        )


@dataclass
class EvalReport:
    outcomes: list
    steps: list
    max_forces: list

    @property
    def n_episodes(self) -> int:
        return len(self.outcomes)

    @property
    def success_rate(self) -> float:
        if not self.outcomes:
            return 0.0
        return sum(o == "Success" for o in self.outcomes) / len(self.outcomes)

    @property
    def violation_count(self) -> int:
        return sum(o == "Violation" for o in self.outcomes)

    @property
    def mean_steps(self) -> float:
        return float(np.mean(self.steps)) if self.steps else 0.0


def run_eval(config: ExperimentConfig, checkpoint_path, out_dir, n_episodes=None) -> EvalReport:
    """Deterministic-policy evaluation (mean actions, gate active, no learning).

    Start positions get a small seeded jitter so the episode set probes a
    neighbourhood of the task rather than one identical rollout.
    """
    config.validate()
    n_episodes = config.eval_episodes if n_episodes is None else n_episodes
    os.makedirs(out_dir, exist_ok=True)
    env = build_env(config)
    scaler = make_scaler(config, env.spec)
    agent = load_agent_checkpoint(config, checkpoint_path)
    mapper = ActionMapper()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 404]))
    hash_ = config.config_hash()

    outcomes, steps_list, forces = [], [], []
    traj_rows = []
    for episode in range(n_episodes):
        state, obs = env.reset()
        for _ in range(200):
            jitter = env.spec.entrance + rng.normal(0.0, config.eval_start_noise, 2)
            if env.clearance(jitter, state) >= 0.0:
                state = env.teleport(state, jitter)
                break
        task_vec = scaler.task_vector(obs)
        outcome = EpisodeOutcome.RUNNING
        steps = 0
        ep_max_force = 0.0
        for t in range(config.horizon):
            decision = agent.select(task_vec, task_vec[:6], rng, deterministic=True)
            action = mapper.denormalize(decision.action)
            gains = controller_gains(action)
            try:
                state, obs, events = env.step(state, action, gains)
            except SimulationError:
                outcome = EpisodeOutcome.VIOLATION
                steps = t + 1
                break
            steps = t + 1
            ep_max_force = max(ep_max_force, events.max_force)
            outcome = classify_termination(events, steps, config.horizon)
            task_vec = scaler.task_vector(obs)
            if config.log_trajectories:
                traj_rows.append(
                    [steps, obs.px, obs.py, obs.wrench[0], obs.wrench[1], obs.wrench[5],
                     gains.k_star.kx, gains.k_star.ky, action.dp[0], action.dp[1],
                     decision.risk, str(outcome)]
                )
            if outcome is not EpisodeOutcome.RUNNING:
                break
        if outcome is EpisodeOutcome.RUNNING:
            outcome = EpisodeOutcome.TIMEOUT
        outcomes.append(str(outcome))
        steps_list.append(steps)
        forces.append(ep_max_force)

    report = EvalReport(outcomes=outcomes, steps=steps_list, max_forces=forces)
    reports.write_csv(
        os.path.join(out_dir, "eval.csv"),
        ["episode", "outcome", "steps", "max_force"],
        [[i, o, s, f] for i, (o, s, f) in enumerate(zip(outcomes, steps_list, forces))],
        config_hash=hash_,
    )
    if config.log_trajectories and traj_rows:
        reports.write_csv(
            os.path.join(out_dir, "trajectory.csv"), TRAJECTORY_COLUMNS, traj_rows,
            config_hash=hash_,
        )
        save_maze(env.spec, os.path.join(out_dir, "maze.json"))
    print(
        f"eval: {report.n_episodes} episodes, success rate {report.success_rate:.2f}, "
        f"{report.violation_count} violations, mean steps {report.mean_steps:.1f}"
    )
    return report


def run_risk_probe(config: ExperimentConfig, checkpoint_path, out_dir, n_probes=200):
    """Random single-action probes scored by the trained risk critic."""
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    env = build_env(config)
    scaler = make_scaler(config, env.spec)
    method = resolve_method(config.method)
    if not method.gated:
        raise ConfigurationError("the risk probe needs a method with a safety critic")
    nets, _, _ = load_checkpoint(checkpoint_path)
    agent = build_agent(config)
    if "safety" not in nets:
        raise ConfigurationError(f"checkpoint {checkpoint_path} carries no safety critic")
    try:
        agent.safety.net.copy_from(nets["safety"])
    except ValueError as exc:
        raise ConfigurationError(f"safety critic does not match config: {exc}") from exc

    from .agents import DP_MAX, K_MAX, K_MIN
    from .controller import Action, StiffnessGains

    points = CollectorConfig.for_maze(env.spec).probe_points
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 505]))
    rows = []
    base_state, _ = env.reset()
    for i in range(n_probes):
        point = points[int(rng.integers(0, len(points)))]
        state = None
        for _ in range(100):
            cand = point + rng.normal(0.0, 0.005, 2)
            if env.clearance(cand, base_state) >= 0.0:
                state = env.teleport(base_state, cand)
                break
        if state is None:
            raise ConfigurationError("could not place a probe start")
        angle = rng.uniform(0.0, 2 * math.pi)
        cap = DP_MAX / max(abs(math.cos(angle)), abs(math.sin(angle)))
        move = rng.uniform(0.0, cap)
        kx, ky = rng.uniform(K_MIN, K_MAX, 2)
        dp = np.array([move * math.cos(angle), move * math.sin(angle)])
        a_norm = np.array(
            [dp[0] / DP_MAX, dp[1] / DP_MAX,
             ActionMapper.normalized_k(kx), ActionMapper.normalized_k(ky)]
        )
        safety_vec = np.zeros(6)  # teleported starts carry no contact load
        risk = agent.safety.risk_single(safety_vec, a_norm)
        action = Action(dp=dp, k=StiffnessGains(kx, ky))
        try:
            _, _, events = env.step(state, action, controller_gains(action))
            force = events.max_force
        except SimulationError:
            force = math.inf
        rows.append([i, float(np.linalg.norm(dp)), float(math.hypot(kx, ky)), force, risk])

    reports.write_csv(
        os.path.join(out_dir, "probe.csv"),
        ["probe", "dp_norm", "k_norm", "force", "risk"],
        rows,
        config_hash=config.config_hash(),
    )
    arr = np.array([r[1:] for r in rows], dtype=float)
    print(f"probe: {n_probes} samples -> {os.path.join(out_dir, 'probe.csv')}")
    return arr


def export_metrics(run_dirs, out_dir) -> list:
    """Render learning-curve/trajectory/probe CSVs into figures + merged CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    produced = []
    curve_runs = {}
    for run_dir in run_dirs:
        label = os.path.relpath(run_dir).replace(os.sep, "/")
        episodes_csv = os.path.join(run_dir, "episodes.csv")
        if os.path.exists(episodes_csv):
            header, rows, _ = reports.read_csv(episodes_csv)
            curve_runs[label] = (header, rows)
        traj_csv = os.path.join(run_dir, "trajectory.csv")
        maze_json = os.path.join(run_dir, "maze.json")
        if os.path.exists(traj_csv) and os.path.exists(maze_json):
            header, rows, _ = reports.read_csv(traj_csv)
            if rows:
                spec = load_maze(maze_json)
                out = os.path.join(out_dir, f"trajectory_{label.replace('/', '_')}.png")
                reports.plot_trajectory(spec, header, rows, out)
                produced.append(out)
        probe_csv = os.path.join(run_dir, "probe.csv")
        if os.path.exists(probe_csv):
            header, rows, _ = reports.read_csv(probe_csv)
            if rows:
                out = os.path.join(out_dir, f"risk_probe_{label.replace('/', '_')}.png")
                reports.plot_risk_probe(header, rows, out)
                produced.append(out)
    if curve_runs:
        merged_rows = []
        for label, (header, rows) in curve_runs.items():
            for row in rows:
                merged_rows.append([label] + row)
        any_header = next(iter(curve_runs.values()))[0]
        merged_csv = os.path.join(out_dir, "learning_curves.csv")
        reports.write_csv(merged_csv, ["run"] + any_header, merged_rows)
        out = os.path.join(out_dir, "learning_curves.png")
        reports.plot_learning_curves(curve_runs, out)
        produced.extend([merged_csv, out])
    if not produced:
        raise ConfigurationError("no exportable logs found in the given run directories")
    return produced
