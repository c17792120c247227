"""Deep deterministic policy gradient, written directly on numpy.

Networks are small fully connected ReLU nets with hand-written reverse-mode
gradients. Training is off-policy from a FIFO replay buffer, with soft-updated
target networks and Ornstein-Uhlenbeck exploration noise.
"""
from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from advbench.metrics import ConvergenceCriterion, TrainingRecord, episodes_to_convergence

CHECKPOINT_MAGIC = b"ADVB"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Raised when a parameter becomes non-finite; ``dump`` holds diagnostics."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


class Mlp:
    """ReLU multilayer perceptron.

    ``out_low``/``out_high`` select a bounded tanh head that maps each output
    into its own interval; without them the output layer is linear.
    """

    def __init__(self, sizes: Sequence[int], out_low=None, out_high=None,
                 rng: np.random.Generator | None = None, final_scale: float = 3e-3):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ShapeError(f"bad layer sizes {sizes}")
        self.sizes = [int(s) for s in sizes]
        self.bounded = out_low is not None
        if self.bounded:
            self.out_low = np.asarray(out_low, dtype=float)
            self.out_high = np.asarray(out_high, dtype=float)
            if self.out_low.shape != (self.sizes[-1],) or np.any(self.out_high <= self.out_low):
                raise ShapeError("output bounds must match the output size with high > low")
        rng = rng or np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            lim = final_scale if i == len(self.sizes) - 2 else 1.0 / math.sqrt(n_in)
            self.params.append(rng.uniform(-lim, lim, (n_in, n_out)))
            self.params.append(rng.uniform(-lim, lim, n_out))

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {flat.size}")
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def _head(self, z):
        if not self.bounded:
            return z
        return self.out_low + (np.tanh(z) + 1.0) * (0.5 * (self.out_high - self.out_low))

    def forward(self, x, cache: list | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ShapeError(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            if cache is not None:
                cache.append(h)
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        if cache is not None:
            cache.append(h)
        return self._head(h)

    def backward(self, cache: list, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients and input gradient for a batch forward pass."""
        g = np.asarray(grad_out, dtype=float)
        z_out = cache[-1]
        if self.bounded:
            t = np.tanh(z_out)
            g = g * (1.0 - t * t) * (0.5 * (self.out_high - self.out_low))
        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        for i in reversed(range(n_layers)):
            h_in = cache[i]
            W = self.params[2 * i]
            grads[2 * i] = h_in.T @ g if h_in.ndim == 2 else np.outer(h_in, g)
            grads[2 * i + 1] = g.sum(axis=0) if g.ndim == 2 else g.copy()
            g = g @ W.T
            if i > 0:
                g = g * (h_in > 0)  # h_in is the ReLU output of the previous layer
        return grads, g

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params)


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


class Loss(Protocol):
    def __call__(self, y: np.ndarray) -> tuple[float, np.ndarray]: ...


def mse_loss(targets, reduction: str = "mean") -> Loss:
    t = np.asarray(targets, dtype=float)

    def loss(y):
        diff = y - t
        if reduction == "sum":
            return float(np.sum(diff * diff)), 2.0 * diff
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    return loss


def linear_loss(weights) -> Loss:
    """sum(weights * y); e.g. weights = -1/B gives the actor's mean-Q ascent loss."""
    w = np.asarray(weights, dtype=float)

    def loss(y):
        return float(np.sum(w * y)), np.broadcast_to(w, y.shape).copy()
    return loss


def gradients(net: Mlp, loss: Loss, batch) -> tuple[float, list[np.ndarray]]:
    """Scalar loss value and exact gradients with respect to every parameter array."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or len(batch) == 0:
        raise ShapeError("batch must be a non-empty 2D array")
    cache: list = []
    y = net.forward(batch, cache)
    value, dy = loss(y)
    grads, _ = net.backward(cache, dy)
    return value, grads


class Momentum:
    """Stochastic gradient descent with heavy-ball momentum."""

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.9,
                 clip_norm: float | None = None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v -= self.lr * g
            p += v


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = None):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind: str, params, lr: float, momentum: float = 0.9, clip_norm=None):
    if kind == "momentum":
        return Momentum(params, lr, momentum, clip_norm)
    if kind == "adam":
        return Adam(params, lr, clip_norm=clip_norm)
    raise ValueError(f"unknown optimizer {kind!r}")


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    for pt, p in zip(target.params, online.params):
        pt *= 1.0 - tau
        pt += tau * p


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with seeded batch sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.rng = np.random.default_rng(seed)
        self.size = 0
        self.head = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s_next, done) -> None:
        s, a, s_next = (np.asarray(v, dtype=float) for v in (s, a, s_next))
        if s.shape != (self.obs_dim,) or s_next.shape != (self.obs_dim,) or a.shape != (self.act_dim,):
            raise ShapeError("transition dimensions do not match the buffer")
        i = self.head
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s_next, float(done)
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def transitions(self) -> list[tuple]:
        """Stored transitions, oldest first."""
        start = self.head if self.size == self.capacity else 0
        idx = [(start + k) % self.capacity for k in range(self.size)]
        return [(self.s[i], self.a[i], self.r[i], self.s2[i], bool(self.done[i])) for i in idx]

    def sample(self, batch_size: int):
        if batch_size > self.size:
            raise ValueError("not enough transitions")
        idx = self.rng.choice(self.size, batch_size, replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]


class OuNoise:
    """Discrete Ornstein-Uhlenbeck process, one independent coordinate per action dimension."""

    def __init__(self, dim: int, theta: float = 0.15, mu: float = 0.0, sigma: float = 0.2,
                 dt: float = 1.0, rng: np.random.Generator | None = None):
        self.dim = dim
        self.theta, self.mu, self.sigma, self.dt = theta, mu, sigma, dt
        self.rng = rng or np.random.default_rng(0)
        self.state = np.full(dim, float(mu))

    def reset(self) -> None:
        self.state = np.full(self.dim, float(self.mu))

    def sample(self, sigma: float | None = None) -> np.ndarray:
        sigma = self.sigma if sigma is None else sigma
        xi = self.rng.standard_normal(self.dim)
        self.state = (self.state + self.theta * (self.mu - self.state) * self.dt
                      + sigma * math.sqrt(self.dt) * xi)
        return self.state

    def stationary_variance(self) -> float:
        return self.sigma ** 2 / (2 * self.theta - self.theta ** 2 * self.dt)


def ou_sample(noise: OuNoise) -> np.ndarray:
    return noise.sample()


@dataclass
class DdpgConfig:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "momentum"
    clip_norm: float | None = 5.0
    batch_size: int = 64
    warmup_steps: int = 500
    buffer_capacity: int = 100_000
    episodes_max: int = 1000
    hidden: tuple[int, ...] = (64, 64)
    reward_scale: float = 1.0
    update_every: int = 1
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_mu: float = 0.0
    ou_dt: float = 1.0
    noise_final_fraction: float = 0.1
    noise_anneal_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size < 1 or self.episodes_max < 1 or self.warmup_steps < 0:
            raise ValueError("batch_size, episodes_max >= 1 and warmup_steps >= 0 required")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("step sizes must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def noise_scale(self, episode: int) -> float:
        """Multiplier on sigma: linear from 1 to ``noise_final_fraction`` over the anneal span."""
        span = self.noise_anneal_fraction * self.episodes_max
        frac = 1.0 if span <= 0 else min(episode / span, 1.0)
        return 1.0 - (1.0 - self.noise_final_fraction) * frac


class DdpgAgent:
    def __init__(self, obs_dim: int, act_low, act_high, config: DdpgConfig):
        self.config = config
        self.act_low = np.asarray(act_low, dtype=float)
        self.act_high = np.asarray(act_high, dtype=float)
        act_dim = len(self.act_low)
        self.obs_dim, self.act_dim = obs_dim, act_dim
        ss = np.random.SeedSequence(config.seed)
        r_actor, r_critic, r_buf, r_noise, self.rng = (np.random.default_rng(s) for s in ss.spawn(5))
        self.actor = Mlp([obs_dim, *config.hidden, act_dim], self.act_low, self.act_high, r_actor)
        self.critic = Mlp([obs_dim + act_dim, *config.hidden, 1], rng=r_critic)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = make_optimizer(config.optimizer, self.actor.params, config.actor_lr,
                                        config.momentum, config.clip_norm)
        self.critic_opt = make_optimizer(config.optimizer, self.critic.params, config.critic_lr,
                                         config.momentum, config.clip_norm)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dim, act_dim, int(r_buf.integers(2**63)))
        self.noise = OuNoise(act_dim, config.ou_theta, config.ou_mu, config.ou_sigma,
                             config.ou_dt, r_noise)
        self.updates = 0

    def act(self, obs, noise_scale: float = 0.0) -> np.ndarray:
        a = self.actor.forward(obs)
        if noise_scale > 0:
            a = a + self.noise.sample(self.config.ou_sigma * noise_scale) * (
                0.5 * (self.act_high - self.act_low))
        return np.clip(a, self.act_low, self.act_high)

    def update(self) -> dict | None:
        return ddpg_update(self)


def ddpg_update(agent: DdpgAgent) -> dict | None:
    """One critic regression step, one actor ascent step, then soft target updates.

    Returns None (a skipped update) while the buffer holds fewer than a batch.
    """
    cfg = agent.config
    if len(agent.buffer) < cfg.batch_size:
        return None
    s, a, r, s2, done = agent.buffer.sample(cfg.batch_size)
    r = r * cfg.reward_scale
    a2 = agent.actor_target.forward(s2)
    q2 = agent.critic_target.forward(np.hstack([s2, a2]))[:, 0]
    y = r + cfg.gamma * (1.0 - done) * q2

    sa = np.hstack([s, a])
    critic_loss, cgrads = gradients(agent.critic, mse_loss(y[:, None]), sa)
    agent.critic_opt.step(cgrads)

    acache: list = []
    mu = agent.actor.forward(s, acache)
    ccache: list = []
    q = agent.critic.forward(np.hstack([s, mu]), ccache)
    _, dq_dinput = agent.critic.backward(ccache, np.full_like(q, -1.0 / len(q)))
    agrads, _ = agent.actor.backward(acache, dq_dinput[:, agent.obs_dim:])
    agent.actor_opt.step(agrads)

    soft_update(agent.actor_target, agent.actor, cfg.tau)
    soft_update(agent.critic_target, agent.critic, cfg.tau)
    agent.updates += 1
    if not (agent.actor.all_finite() and agent.critic.all_finite()):
        raise TrainingDiverged("non-finite network parameters", {
            "updates": agent.updates, "critic_loss": critic_loss,
            "reward_range": (float(r.min()), float(r.max())),
            "target_range": (float(np.nanmin(y)), float(np.nanmax(y))),
        })
    return {"critic_loss": critic_loss, "mean_q": float(np.mean(q)), "target_mean": float(np.mean(y))}


class Env(Protocol):
    obs_dim: int
    act_low: np.ndarray
    act_high: np.ndarray

    def reset(self, seed: int) -> np.ndarray: ...

    def step(self, action: np.ndarray): ...


def train(env: Env, config: DdpgConfig, criterion: ConvergenceCriterion | None = None,
          role: str = "adversary", stop_at_convergence: bool = True,
          callback: Callable[[int, float], None] | None = None) -> tuple[DdpgAgent, TrainingRecord]:
    """Train a DDPG agent on ``env``; ``env.step`` returns (obs, RewardRecord, done, info).

    Episode ``k`` is reset with a seed drawn from ``config.seed``, so a run is
    fully determined by the environment and the config.
    """
    if role not in ("adversary", "subject"):
        raise ValueError(f"unknown role {role!r}")
    agent = DdpgAgent(env.obs_dim, env.act_low, env.act_high, config)
    criterion = criterion or ConvergenceCriterion()
    record = TrainingRecord(config=config.to_dict() | {"role": role}, seed=config.seed)
    episode_seeds = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    total_steps = 0
    for ep in range(config.episodes_max):
        obs = env.reset(int(episode_seeds.integers(2**63)))
        agent.noise.reset()
        scale = config.noise_scale(ep)
        rewards_this_episode = []
        info = {}
        done = False
        while not done:
            if total_steps < config.warmup_steps:
                action = agent.rng.uniform(agent.act_low, agent.act_high)
            else:
                action = agent.act(obs, noise_scale=scale)
            obs2, rec, done, info = env.step(action)
            rewards_this_episode.append(rec.value)
            agent.buffer.add(obs, action, rec.value, obs2, done and not info.get("truncated", False))
            obs = obs2
            total_steps += 1
            if total_steps >= config.warmup_steps and total_steps % config.update_every == 0:
                agent.update()
        record.returns.append(math.fsum(rewards_this_episode))
        record.steps.append(len(rewards_this_episode))
        record.successes.append(bool(info.get("success", False)))
        if callback is not None:
            callback(ep, record.returns[-1])
        if stop_at_convergence and len(record.returns) >= 3 * criterion.window:
            e = episodes_to_convergence(record, criterion)
            if e is not None and len(record.returns) >= e + criterion.window:
                break
    return agent, record


def save_checkpoint(net: Mlp, path) -> None:
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(net.sizes))
    header += struct.pack(f"<{len(net.sizes)}I", *net.sizes)
    body = b"".join(p.astype("<f8").tobytes(order="C") for p in net.params)
    Path(path).write_bytes(header + body)


def load_checkpoint(path, out_low=None, out_high=None) -> Mlp:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an ADVB checkpoint")
    version, n = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    sizes = list(struct.unpack_from(f"<{n}I", data, 12))
    net = Mlp(sizes, out_low, out_high)
    flat = np.frombuffer(data, dtype="<f8", offset=12 + 4 * n)
    net.set_flat(flat.astype(float))
    return net
