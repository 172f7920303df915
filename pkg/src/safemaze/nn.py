"""Minimal network substrate: ReLU MLPs with hand-rolled reverse mode.

All parameters of a network live in one flat float64 vector; weight matrices
and bias vectors are reshaped views into it. That makes Adam and soft target
updates single fused array operations, finite-difference checks trivial, and
checkpoints bit-exact.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .errors import FormatError

HEADS = ("linear", "tanh", "sigmoid")
CHECKPOINT_VERSION = 1
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


class Mlp:
    """Fully connected ReLU network with a selectable output head."""

    def __init__(self, widths, head="linear", rng=None, final_scale=1.0, dtype=np.float64):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.widths = widths
        self.head = head
        self.dtype = np.dtype(dtype)
        n = sum((widths[i] + 1) * widths[i + 1] for i in range(len(widths) - 1))
        self.params = np.zeros(n, dtype=self.dtype)
        self.grads = np.zeros(n, dtype=self.dtype)
        self._views = []
        self._grad_views = []
        off = 0
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            w = self.params[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
            gw = self.grads[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = self.params[off : off + fan_out]
            gb = self.grads[off : off + fan_out]
            off += fan_out
            self._views.append((w, b))
            self._grad_views.append((gw, gb))
        if rng is not None:
            self.initialize(rng, final_scale)
        self._cache = None

    def initialize(self, rng: np.random.Generator, final_scale: float = 1.0) -> None:
        """Uniform fan-in init; the last layer may be shrunk for gentle starts."""
        last = len(self._views) - 1
        for i, (w, b) in enumerate(self._views):
            bound = 1.0 / math.sqrt(w.shape[0])
            w[:] = rng.uniform(-bound, bound, size=w.shape)
            b[:] = rng.uniform(-bound, bound, size=b.shape)
            if i == last:
                w *= final_scale
                b *= final_scale

    @property
    def n_params(self) -> int:
        return self.params.size

    def forward(self, x: np.ndarray, remember: bool = False) -> np.ndarray:
        """Forward pass; remember=True records activations for backward()."""
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.widths[0]:
            raise ValueError(f"input width {x.shape[1]} != {self.widths[0]}")
        acts = [x]
        h = x
        n_layers = len(self._views)
        for i, (w, b) in enumerate(self._views):
            z = h @ w + b
            if i < n_layers - 1:
                z = np.maximum(z, 0.0)
            h = z
            acts.append(h)
        if self.head == "tanh":
            y = np.tanh(h)
        elif self.head == "sigmoid":
            y = expit(h)
        else:
            y = h
        if remember:
            self._cache = (acts, y)
        return y[0] if squeeze else y

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def backward(self, grad_out: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        """Reverse pass for the last remembered forward.

        Overwrites self.grads and returns the gradient with respect to the
        network input (same batch shape as the forward input), or None when
        need_input_grad is False.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a remembered forward pass")
        acts, y = self._cache
        g = np.asarray(grad_out, dtype=self.dtype)
        if g.ndim == 1:
            g = g[None, :]
        if self.head == "tanh":
            g = g * (1.0 - y * y)
        elif self.head == "sigmoid":
            g = g * y * (1.0 - y)
        for i in range(len(self._views) - 1, -1, -1):
            w, _ = self._views[i]
            gw, gb = self._grad_views[i]
            if i < len(self._views) - 1:
                g = g * (acts[i + 1] > 0.0)
            np.matmul(acts[i].T, g, out=gw)
            np.sum(g, axis=0, out=gb)
            if i > 0 or need_input_grad:
                g = g @ w.T
        return g if need_input_grad else None

    def copy_from(self, other: "Mlp") -> None:
        if self.widths != other.widths or self.head != other.head:
            raise ValueError("network architectures differ")
        if self.dtype != other.dtype:
            raise ValueError("network dtypes differ")
        self.params[:] = other.params

    def clone(self) -> "Mlp":
        net = Mlp(self.widths, head=self.head, dtype=self.dtype)
        net.params[:] = self.params
        return net


class Adam:
    """Classic Adam on a flat parameter vector."""

    def __init__(self, n_params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n_params, dtype=dtype)
        self.v = np.zeros(n_params, dtype=dtype)
        self._scratch = np.empty(n_params, dtype=dtype)

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise ValueError("parameter/gradient shape mismatch")
        self.t += 1
        s = self._scratch
        self.m *= self.beta1
        np.multiply(grads, 1.0 - self.beta1, out=s)
        self.m += s
        self.v *= self.beta2
        np.multiply(grads, grads, out=s)
        s *= 1.0 - self.beta2
        self.v += s
        # s <- lr * m_hat / (sqrt(v_hat) + eps)
        np.divide(self.v, 1.0 - self.beta2**self.t, out=s)
        np.sqrt(s, out=s)
        s += self.eps
        np.divide(self.m, s, out=s)
        s *= self.lr / (1.0 - self.beta1**self.t)
        params -= s


def soft_update(target: Mlp, source: Mlp, tau: float) -> None:
    """Polyak update: theta' <- (1 - tau) * theta' + tau * theta."""
    if target.widths != source.widths or target.head != source.head:
        raise ValueError("network architectures differ")
    target.params *= 1.0 - tau
    target.params += tau * source.params


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class SquashedGaussianPolicy:
    """Tanh-squashed diagonal Gaussian policy head over an MLP trunk.

    The trunk outputs [mean, log_std] per action dimension; samples are
    reparameterized and the log-density carries the tanh change of variables.
    """

    def __init__(self, obs_dim, act_dim, hidden, rng=None, final_scale=0.01, dtype=np.float64):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.net = Mlp((obs_dim, *hidden, 2 * act_dim), head="linear", rng=rng,
                       final_scale=final_scale, dtype=dtype)

    def _split(self, out):
        mu = out[..., : self.act_dim]
        log_std = np.clip(out[..., self.act_dim :], LOG_STD_MIN, LOG_STD_MAX)
        raw = out[..., self.act_dim :]
        return mu, log_std, raw

    def sample(self, obs, rng, remember=False):
        """Reparameterized sample: returns (action, log_prob, aux).

        aux carries everything backprop_actor() needs; pass remember=True when
        a gradient step will follow.
        """
        out = self.net.forward(obs, remember=remember)
        single = out.ndim == 1
        if single:
            out = out[None, :]
        mu, log_std, raw = self._split(out)
        sigma = np.exp(log_std)
        eps = np.asarray(rng.standard_normal(mu.shape), dtype=self.net.dtype)
        u = mu + sigma * eps
        a = np.tanh(u)
        # log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u)), numerically safe
        log1m_a2 = 2.0 * (math.log(2.0) - u - softplus(-2.0 * u))
        logp = np.sum(
            -0.5 * eps**2 - log_std - 0.5 * math.log(2.0 * math.pi) - log1m_a2, axis=-1
        )
        aux = {
            "a": a,
            "sigma": sigma,
            "eps": eps,
            "raw": raw,
            "clip_mask": (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX),
        }
        if single:
            return a[0], float(logp[0]), aux
        return a, logp, aux

    def mean_action(self, obs):
        """Deterministic head: tanh of the mean (the zero-noise limit)."""
        out = self.net.forward(obs)
        mu = out[..., : self.act_dim]
        return np.tanh(mu)

    def log_prob(self, obs, action, clip=0.999999):
        """Log-density of a squashed action (used by diagnostics/tests)."""
        out = self.net.forward(obs)
        single = out.ndim == 1
        if single:
            out = out[None, :]
            action = np.asarray(action)[None, :]
        mu, log_std, _ = self._split(out)
        sigma = np.exp(log_std)
        a = np.clip(action, -clip, clip)
        u = np.arctanh(a)
        z = (u - mu) / sigma
        log1m_a2 = 2.0 * (math.log(2.0) - u - softplus(-2.0 * u))
        logp = np.sum(
            -0.5 * z**2 - log_std - 0.5 * math.log(2.0 * math.pi) - log1m_a2, axis=-1
        )
        return float(logp[0]) if single else logp

    def backprop_actor(self, aux, grad_a, grad_logp):
        """Backpropagate dL/da and dL/dlogp through the sampling path.

        grad_a: (B, act_dim); grad_logp: (B,). Overwrites self.net.grads.
        """
        a = aux["a"]
        sigma = aux["sigma"]
        eps = aux["eps"]
        one_m_a2 = 1.0 - a * a
        glp = grad_logp[:, None]
        d_mu = grad_a * one_m_a2 + glp * (2.0 * a)
        d_log_std = grad_a * one_m_a2 * sigma * eps + glp * (2.0 * a * sigma * eps - 1.0)
        d_log_std = d_log_std * aux["clip_mask"]
        self.net.backward(np.concatenate([d_mu, d_log_std], axis=-1))
        return self.net.grads


def sample_squashed(policy: SquashedGaussianPolicy, obs, rng):
    """Draw one squashed-Gaussian action and its log-probability."""
    a, logp, _ = policy.sample(obs, rng)
    return a, logp


def save_checkpoint(path, nets: dict, scalars: dict | None = None, meta: dict | None = None):
    """Versioned binary dump of named networks plus scalar state."""
    payload = {"__version__": np.array([CHECKPOINT_VERSION], dtype=np.int64)}
    for name, net in nets.items():
        payload[f"net.{name}.widths"] = np.array(net.widths, dtype=np.int64)
        payload[f"net.{name}.head"] = np.array([HEADS.index(net.head)], dtype=np.int64)
        payload[f"net.{name}.params"] = net.params
    for name, value in (scalars or {}).items():
        payload[f"scalar.{name}"] = np.array([float(value)])
    for name, value in (meta or {}).items():
        payload[f"meta.{name}"] = np.array([str(value)])
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (nets, scalars, meta)."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__version__" not in data or int(data["__version__"][0]) != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version in {path}")
    nets, scalars, meta = {}, {}, {}
    names = {key.split(".", 2)[1] for key in data.files if key.startswith("net.")}
    for name in sorted(names):
        try:
            widths = tuple(int(w) for w in data[f"net.{name}.widths"])
            head = HEADS[int(data[f"net.{name}.head"][0])]
            params = data[f"net.{name}.params"]
        except KeyError as exc:
            raise FormatError(f"checkpoint {path} is missing fields for net {name}") from exc
        net = Mlp(widths, head=head, dtype=params.dtype)
        if params.shape != net.params.shape:
            raise FormatError(f"checkpoint {path}: parameter count mismatch for {name}")
        net.params[:] = params
        nets[name] = net
    for key in data.files:
        if key.startswith("scalar."):
            scalars[key.split(".", 1)[1]] = float(data[key][0])
        elif key.startswith("meta."):
            meta[key.split(".", 1)[1]] = str(data[key][0])
    return nets, scalars, meta
