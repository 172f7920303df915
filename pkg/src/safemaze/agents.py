"""Learning stack: risk critic, recovery policy, SAC task policy, gating.

The task policy proposes a normalized action; a pretrained risk critic scores
the proposal from the force/torque reading alone, and when the predicted risk
exceeds the gate threshold the recovery policy's action is executed instead.
Constant-stiffness method variants learn only the displacement half of the
action and pin the gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import Action, StiffnessGains
from .env import SafetyObservation, TaskObservation
from .errors import ConfigurationError
from .nn import Adam, Mlp, SquashedGaussianPolicy, soft_update

SAFETY_OBS_DIM = 6
TASK_OBS_DIM = 9
FULL_ACTION_DIM = 4

DP_MAX = 0.03
K_MIN = 300.0
K_MAX = 1000.0
_K_MID = 0.5 * (K_MIN + K_MAX)
_K_HALF = 0.5 * (K_MAX - K_MIN)


@dataclass(frozen=True)
class GateConfig:
    epsilon_risk: float = 0.7
    gamma_risk: float = 0.65

    def __post_init__(self):
        if not (0.0 < self.epsilon_risk < 1.0 and 0.0 < self.gamma_risk < 1.0):
            raise ConfigurationError("gate parameters must lie in (0, 1)")


@dataclass(frozen=True)
class MethodSpec:
    """One experiment variant: stiffness learning on/off, risk gating on/off."""

    name: str
    learn_stiffness: bool
    gated: bool
    pinned_k: float | None = None

    @property
    def policy_action_dim(self) -> int:
        return FULL_ACTION_DIM if self.learn_stiffness else 2


METHODS = {
    "SRL-VIC": MethodSpec("SRL-VIC", learn_stiffness=True, gated=True),
    "Std_RL-VIC": MethodSpec("Std_RL-VIC", learn_stiffness=True, gated=False),
    "SRL-K300": MethodSpec("SRL-K300", learn_stiffness=False, gated=True, pinned_k=300.0),
    "SRL-K1000": MethodSpec("SRL-K1000", learn_stiffness=False, gated=True, pinned_k=1000.0),
}


def resolve_method(name: str) -> MethodSpec:
    for key, spec in METHODS.items():
        if key.lower() == name.lower():
            return spec
    raise ConfigurationError(f"unknown method {name!r}; choose from {list(METHODS)}")


class ActionMapper:
    """Linear map between normalized [-1, 1]^4 actions and physical commands."""

    def __init__(self):
        self.clamp_warnings = 0

    def denormalize(self, a: np.ndarray) -> Action:
        a = np.asarray(a, dtype=float)
        if a.shape != (FULL_ACTION_DIM,):
            raise ConfigurationError(f"expected a 4-vector action, got shape {a.shape}")
        if np.any(np.abs(a) > 1.0 + 1e-12):
            self.clamp_warnings += 1
        a = np.clip(a, -1.0, 1.0)
        return Action(
            dp=DP_MAX * a[:2],
            k=StiffnessGains(_K_MID + _K_HALF * a[2], _K_MID + _K_HALF * a[3]),
        )

    @staticmethod
    def normalize(action: Action) -> np.ndarray:
        return np.array(
            [
                action.dp[0] / DP_MAX,
                action.dp[1] / DP_MAX,
                (action.k.kx - _K_MID) / _K_HALF,
                (action.k.ky - _K_MID) / _K_HALF,
            ]
        )

    @staticmethod
    def normalized_k(k: float) -> float:
        return (k - _K_MID) / _K_HALF


@dataclass(frozen=True)
class ObservationScaler:
    """Fixed diagonal scaling keeping network inputs O(1)."""

    force_scale: float = 32.0
    position_scale: float = 0.35

    def task_vector(self, obs: TaskObservation) -> np.ndarray:
        v = obs.vector()
        v[:6] /= self.force_scale
        v[6:] /= self.position_scale
        return v

    def safety_vector(self, obs) -> np.ndarray:
        wrench = obs.wrench if hasattr(obs, "wrench") else obs
        return np.asarray(wrench, dtype=float) / self.force_scale


def q_risk_target(cost, done, next_risk, gamma_risk: float):
    """Bellman target for the discounted violation-probability critic.

    target = c + (1 - c) * gamma_risk * Q'(s', a'); the bootstrap term is
    dropped when the episode ended without a violation.
    """
    cost = np.asarray(cost, dtype=float)
    done = np.asarray(done, dtype=float)
    next_risk = np.asarray(next_risk, dtype=float)
    return cost + (1.0 - cost) * (1.0 - done) * gamma_risk * next_risk


class SafetyCritic:
    """Sigmoid-headed action-value net for violation risk, with target twin."""

    def __init__(self, hidden=(256, 256), lr=3e-4, tau=0.005, rng=None,
                 obs_dim=SAFETY_OBS_DIM, act_dim=FULL_ACTION_DIM, dtype=np.float64):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.net = Mlp((obs_dim + act_dim, *hidden, 1), head="sigmoid", rng=rng, dtype=dtype)
        self.target = self.net.clone()
        self.opt = Adam(self.net.n_params, lr=lr, dtype=dtype)
        self.tau = tau

    def risk(self, obs, act, use_target=False) -> np.ndarray:
        x = np.concatenate([obs, act], axis=-1)
        net = self.target if use_target else self.net
        out = net(x)
        return out[..., 0]

    def risk_single(self, obs_vec, act_vec) -> float:
        return float(self.risk(obs_vec[None, :], act_vec[None, :])[0])

    def value_and_action_grad(self, obs, act):
        """Q values plus dQ/da, for descent-based recovery training."""
        x = np.concatenate([obs, act], axis=-1)
        q = self.net.forward(x, remember=True)
        gin = self.net.backward(np.ones_like(q))
        return q[:, 0], gin[:, self.obs_dim :]

    def update(self, batch: dict, next_actions: np.ndarray, gamma_risk: float) -> float:
        """One MSE step toward the bootstrap target; soft-updates the twin."""
        states = batch["states"]
        if states.shape[0] == 0:
            raise ValueError("empty batch")
        next_q = self.risk(batch["next_states"], next_actions, use_target=True)
        target = q_risk_target(batch["signals"], batch["dones"], next_q, gamma_risk)
        # keep regression targets off the exact sigmoid asymptotes so the
        # head cannot saturate into a vanishing-gradient regime
        target = np.clip(target, 1e-3, 1.0 - 1e-3)
        x = np.concatenate([states, batch["actions"]], axis=-1)
        q = self.net.forward(x, remember=True)
        err = np.asarray(q - target[:, None], dtype=self.net.dtype)
        loss = 0.5 * float(np.mean(err**2))
        self.net.backward(err / err.shape[0], need_input_grad=False)
        self.opt.step(self.net.params, self.net.grads)
        soft_update(self.target, self.net, self.tau)
        return loss


class RecoveryPolicy:
    """Deterministic tanh policy trained to descend the risk critic."""

    def __init__(self, hidden=(256, 256), lr=3e-4, tau=0.005, rng=None,
                 obs_dim=SAFETY_OBS_DIM, act_dim=FULL_ACTION_DIM, dtype=np.float64):
        self.net = Mlp((obs_dim, *hidden, act_dim), head="tanh", rng=rng, final_scale=0.01,
                       dtype=dtype)
        self.target = self.net.clone()
        self.opt = Adam(self.net.n_params, lr=lr, dtype=dtype)
        self.tau = tau

    def act(self, obs, use_target=False) -> np.ndarray:
        net = self.target if use_target else self.net
        return net(obs)

    def update(self, states: np.ndarray, critic) -> float:
        """Deterministic policy-gradient step on mean critic value.

        The critic is held fixed; only dQ/da flows into the actor.
        """
        if states.shape[0] == 0:
            raise ValueError("empty batch")
        actions = self.net.forward(states, remember=True)
        q, dq_da = critic.value_and_action_grad(states, actions)
        self.net.backward(dq_da / states.shape[0], need_input_grad=False)
        self.opt.step(self.net.params, self.net.grads)
        soft_update(self.target, self.net, self.tau)
        return float(np.mean(q))


class SacAgent:
    """Soft actor-critic with twin critics and learned temperature."""

    def __init__(self, obs_dim, act_dim, hidden=(256, 256), lr=3e-4, tau=0.005,
                 gamma=0.9, rng=None, target_entropy=None, init_alpha=1.0,
                 dtype=np.float64):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.gamma = gamma
        self.tau = tau
        self.policy = SquashedGaussianPolicy(obs_dim, act_dim, hidden, rng=rng, dtype=dtype)
        self.q1 = Mlp((obs_dim + act_dim, *hidden, 1), rng=rng, dtype=dtype)
        self.q2 = Mlp((obs_dim + act_dim, *hidden, 1), rng=rng, dtype=dtype)
        self.q1_target = self.q1.clone()
        self.q2_target = self.q2.clone()
        self.policy_opt = Adam(self.policy.net.n_params, lr=lr, dtype=dtype)
        self.q1_opt = Adam(self.q1.n_params, lr=lr, dtype=dtype)
        self.q2_opt = Adam(self.q2.n_params, lr=lr, dtype=dtype)
        self.log_alpha = math.log(init_alpha)
        self.alpha_opt = Adam(1, lr=lr)
        self._log_alpha_vec = np.array([self.log_alpha])
        self.target_entropy = float(-act_dim if target_entropy is None else target_entropy)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def sample_action(self, obs_vec: np.ndarray, rng) -> np.ndarray:
        a, _, _ = self.policy.sample(obs_vec, rng)
        return a

    def deterministic_action(self, obs_vec: np.ndarray) -> np.ndarray:
        return self.policy.mean_action(obs_vec)

    def update(self, batch: dict, rng) -> dict:
        """One round: twin-critic TD step, actor step, temperature step."""
        s = batch["states"]
        if s.shape[0] == 0:
            raise ValueError("empty batch")
        a = batch["actions"]
        r = batch["signals"]
        s2 = batch["next_states"]
        done = batch["dones"]
        n = s.shape[0]
        alpha = self.alpha

        a2, logp2, _ = self.policy.sample(s2, rng)
        x2 = np.concatenate([s2, a2], axis=-1)
        q_next = np.minimum(self.q1_target(x2)[:, 0], self.q2_target(x2)[:, 0])
        y = r + self.gamma * (1.0 - done) * (q_next - alpha * logp2)

        x = np.concatenate([s, a], axis=-1)
        q_losses = []
        for net, opt in ((self.q1, self.q1_opt), (self.q2, self.q2_opt)):
            q = net.forward(x, remember=True)
            err = np.asarray(q - y[:, None], dtype=net.dtype)
            q_losses.append(float(np.mean(err**2)))
            net.backward(2.0 * err / n, need_input_grad=False)
            opt.step(net.params, net.grads)

        a_pi, logp_pi, aux = self.policy.sample(s, rng, remember=True)
        x_pi = np.concatenate([s, a_pi], axis=-1)
        q1_pi = self.q1.forward(x_pi, remember=True)
        q2_pi = self.q2.forward(x_pi, remember=True)
        use_q1 = (q1_pi <= q2_pi)[:, 0]
        g1 = self.q1.backward(np.where(use_q1, -1.0 / n, 0.0)[:, None])
        g2 = self.q2.backward(np.where(use_q1, 0.0, -1.0 / n)[:, None])
        dq_da = (g1 + g2)[:, self.obs_dim :]
        actor_loss = float(np.mean(alpha * logp_pi - np.minimum(q1_pi, q2_pi)[:, 0]))
        self.policy.backprop_actor(aux, grad_a=dq_da, grad_logp=np.full(n, alpha / n))
        self.policy_opt.step(self.policy.net.params, self.policy.net.grads)

        # temperature moves to hold E[-log pi] at the target entropy:
        # d/dlog_alpha of -log_alpha * E[logp + H_target]
        ent_err = float(np.mean(logp_pi + self.target_entropy))
        self._log_alpha_vec[0] = self.log_alpha
        self.alpha_opt.step(self._log_alpha_vec, np.array([-ent_err]))
        self.log_alpha = float(self._log_alpha_vec[0])

        soft_update(self.q1_target, self.q1, self.tau)
        soft_update(self.q2_target, self.q2, self.tau)
        return {
            "q1_loss": q_losses[0],
            "q2_loss": q_losses[1],
            "actor_loss": actor_loss,
            "alpha": self.alpha,
            "td_error": 0.5 * (q_losses[0] + q_losses[1]),
        }


class OuNoise:
    """Mean-reverting observation noise: x += theta*(mu - x)*dt + sigma*sqrt(dt)*N."""

    def __init__(self, dim, theta=0.15, sigma=0.05, dt=1.0, mu=0.0):
        self.theta = theta
        self.sigma = sigma
        self.dt = dt
        self.mu = mu
        self.state = np.full(dim, float(mu))

    def reset(self) -> None:
        self.state[:] = self.mu

    def step(self, rng: np.random.Generator) -> np.ndarray:
        self.state += self.theta * (self.mu - self.state) * self.dt
        self.state += self.sigma * math.sqrt(self.dt) * rng.standard_normal(self.state.size)
        return self.state


def apply_ou_noise(obs_vec: np.ndarray, noise: OuNoise, rng: np.random.Generator) -> np.ndarray:
    """Advance the noise process one step and add it to the observation."""
    return obs_vec + noise.step(rng)


@dataclass
class GateDecision:
    action: np.ndarray  # executed normalized 4-vector
    source: str  # "task" or "recovery"
    risk: float  # critic score of the task proposal (nan when ungated)
    proposal: np.ndarray  # the task policy's normalized 4-vector proposal


class MazeAgent:
    """Per-method bundle: task policy plus optional safety critic/recovery."""

    def __init__(self, method: MethodSpec, gate: GateConfig, hidden=(256, 256),
                 lr=3e-4, tau=0.005, gamma=0.9, seed=0, dtype=np.float32):
        self.method = method
        self.gate = gate
        ss = np.random.SeedSequence(seed)
        keys = ss.spawn(4)
        self.sac = SacAgent(
            TASK_OBS_DIM,
            method.policy_action_dim,
            hidden=hidden,
            lr=lr,
            tau=tau,
            gamma=gamma,
            rng=np.random.default_rng(keys[0]),
            dtype=dtype,
        )
        self.safety: SafetyCritic | None = None
        self.recovery: RecoveryPolicy | None = None
        if method.gated:
            self.safety = SafetyCritic(hidden=hidden, lr=lr, tau=tau,
                                       rng=np.random.default_rng(keys[1]), dtype=dtype)
            self.recovery = RecoveryPolicy(hidden=hidden, lr=lr, tau=tau,
                                           rng=np.random.default_rng(keys[2]), dtype=dtype)

    def full_action(self, policy_action: np.ndarray) -> np.ndarray:
        """Embed a policy-space action into the normalized 4-vector."""
        if self.method.learn_stiffness:
            return np.asarray(policy_action, dtype=float)
        k_norm = ActionMapper.normalized_k(self.method.pinned_k)
        return np.concatenate([policy_action, [k_norm, k_norm]])

    def select(self, task_vec, safety_vec, rng, deterministic=False,
               proposal: np.ndarray | None = None) -> GateDecision:
        """Risk-gated action choice.

        The task proposal executes iff its predicted risk stays at or below
        epsilon_risk; above it, the recovery policy takes over. `proposal`
        overrides the policy sample (uniform warmup actions).
        """
        if proposal is None:
            if deterministic:
                proposal = self.sac.deterministic_action(task_vec)
            else:
                proposal = self.sac.sample_action(task_vec, rng)
        full_proposal = self.full_action(proposal)
        if not self.method.gated:
            return GateDecision(action=full_proposal, source="task", risk=math.nan,
                                proposal=full_proposal)
        risk = self.safety.risk_single(safety_vec, full_proposal)
        if risk <= self.gate.epsilon_risk:
            return GateDecision(action=full_proposal, source="task", risk=risk,
                                proposal=full_proposal)
        rec = self.recovery.act(safety_vec)
        rec_full = rec.copy()
        if not self.method.learn_stiffness:
            k_norm = ActionMapper.normalized_k(self.method.pinned_k)
            rec_full[2:] = k_norm
        return GateDecision(action=rec_full, source="recovery", risk=risk,
                            proposal=full_proposal)
