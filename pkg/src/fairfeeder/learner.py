"""Soft actor-critic over the curtailment environment.

Actions are curtailment fractions, so the Gaussian policy sample ``u`` is
squashed with ``a = (tanh(u) + 1) / 2`` and the log-density carries the
matching change-of-variables term. Twin critics share one ensemble network;
target critics track them by Polyak averaging.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, sample_episode
from .env import CurtailmentEnv, rollout
from .nn import MLP, Adam, flatten, soft_update

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
CHECKPOINT_FORMAT = "fairfeeder-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    gamma: float = 0.99
    learning_rate: float = 3e-4
    batch_size: int = 64
    total_steps: int = 30_000
    tau: float = 5e-3
    target_entropy: float | None = None  # None -> minus the action dimension
    buffer_capacity: int = 100_000
    warmup_steps: int = 1_000
    hidden: tuple[int, ...] = (64, 64)
    init_temperature: float = 1.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    normalizer_days: int = 20
    dtype: str = "float32"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        for name in ("learning_rate", "batch_size", "total_steps", "buffer_capacity", "init_temperature"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class ReplayBuffer:
    """FIFO ring buffer; batches are drawn uniformly without replacement."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, dtype=np.float64):
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.states = np.zeros((capacity, state_dim), dtype=dtype)
        self.actions = np.zeros((capacity, action_dim), dtype=dtype)
        self.rewards = np.zeros(capacity, dtype=dtype)
        self.next_states = np.zeros((capacity, state_dim), dtype=dtype)
        self.dones = np.zeros(capacity, dtype=dtype)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward, next_state, done) -> None:
        state = np.asarray(state, dtype=float)
        next_state = np.asarray(next_state, dtype=float)
        action = np.asarray(action, dtype=float)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise ValueError(f"state must have shape ({self.state_dim},), got {state.shape}/{next_state.shape}")
        if action.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},), got {action.shape}")
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered_indices(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self._next + np.arange(self.capacity)) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if batch_size > self.size:
            raise ValueError(f"cannot draw {batch_size} distinct transitions from {self.size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_states": self.next_states[idx],
            "dones": self.dones[idx],
        }


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, samples, min_std: float = 1e-6) -> "Normalizer":
        samples = np.asarray(samples, dtype=float)
        std = samples.std(axis=0)
        std = np.where(std < min_std, 1.0, std)
        return cls(samples.mean(axis=0), std)


def log_one_minus_tanh_sq(u):
    # log(1 - tanh(u)^2) without cancellation for large |u|
    return 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


class SquashedGaussianPolicy:
    def __init__(self, obs_dim: int, action_dim: int, hidden, rng: np.random.Generator,
                 log_std_bounds=(-20.0, 2.0), dtype=np.float64):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.dtype = np.dtype(dtype)
        self.net = MLP((obs_dim, *hidden, 2 * action_dim), rng, out_scale=0.1, dtype=dtype)
        self.log_std_min, self.log_std_max = log_std_bounds

    @property
    def params(self):
        return self.net.params

    def _check(self, obs):
        obs = np.asarray(obs, dtype=self.dtype)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"state dimension {obs.shape[-1]} does not match policy input {self.obs_dim}")
        return obs

    def heads(self, obs, params=None):
        out, cache = self.net.forward(obs, params)
        A = self.action_dim
        mu, raw = out[:, :A], out[:, A:]
        log_std = np.clip(raw, self.log_std_min, self.log_std_max)
        inside = (raw >= self.log_std_min) & (raw <= self.log_std_max)
        return mu, log_std, inside, cache

    def sample(self, obs, noise, params=None) -> dict:
        """Reparameterised draw for a batch of observations and fixed noise."""
        obs = self._check(np.atleast_2d(obs))
        mu, log_std, inside, cache = self.heads(obs, params)
        std = np.exp(log_std)
        u = mu + std * noise
        tu = np.tanh(u)
        action = 0.5 * (tu + 1.0)
        gauss = -0.5 * noise**2 - log_std - 0.5 * LOG_2PI
        log_prob = np.sum(gauss - (log_one_minus_tanh_sq(u) - LOG_2), axis=1)
        return {"action": action, "log_prob": log_prob, "u": u, "tanh_u": tu, "std": std,
                "noise": noise, "inside": inside, "cache": cache}

    def backward(self, draw: dict, grad_action, grad_log_prob, params=None):
        """Parameter gradients given dL/d(action) (B, A) and dL/d(log_prob) (B,)."""
        tu = draw["tanh_u"]
        glp = np.asarray(grad_log_prob, dtype=float)[:, None]
        g_u = grad_action * 0.5 * (1.0 - tu * tu) + glp * 2.0 * tu
        g_mu = g_u
        g_ls = (g_u * draw["std"] * draw["noise"] - glp) * draw["inside"]
        grads, _ = self.net.backward(draw["cache"], np.concatenate([g_mu, g_ls], axis=1), params)
        return grads

    def deterministic(self, obs):
        obs = self._check(np.atleast_2d(obs))
        mu, _, _, _ = self.heads(obs)
        return 0.5 * (np.tanh(mu) + 1.0)


def select_action(policy: SquashedGaussianPolicy, state, mode: str = "stochastic",
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Action in [0, 1]^H for a single normalised state vector."""
    state = np.asarray(state, dtype=float)
    if state.shape != (policy.obs_dim,):
        raise ValueError(f"state dimension {state.shape} does not match policy input {policy.obs_dim}")
    if mode == "deterministic":
        return policy.deterministic(state)[0]
    if mode != "stochastic":
        raise ValueError(f"unknown action mode {mode!r}")
    if rng is None:
        raise ValueError("stochastic mode needs an rng")
    noise = rng.standard_normal((1, policy.action_dim), dtype=policy.dtype)
    return policy.sample(state, noise)["action"][0]


class SACAgent:
    def __init__(self, obs_dim: int, action_dim: int, config: TrainConfig, rng: np.random.Generator,
                 normalizer: Normalizer | None = None):
        self.config = config
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.rng = rng
        self.normalizer = normalizer or Normalizer.identity(obs_dim)
        self.dtype = np.dtype(config.dtype)
        self.policy = SquashedGaussianPolicy(obs_dim, action_dim, config.hidden, rng,
                                             (config.log_std_min, config.log_std_max), self.dtype)
        self.critic = MLP((obs_dim + action_dim, *config.hidden, 1), rng, ensemble=2, dtype=self.dtype)
        self.critic_target = self.critic.copy()
        self.log_temperature = np.array([math.log(config.init_temperature)])
        self.target_entropy = -float(action_dim) if config.target_entropy is None else config.target_entropy
        lr = config.learning_rate
        self.actor_opt = Adam([self.policy.net.flat], lr)
        self.critic_opt = Adam([self.critic.flat], lr)
        self.temperature_opt = Adam([self.log_temperature], lr)
        self.updates = 0

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature[0]))

    def act(self, state, deterministic: bool = False) -> np.ndarray:
        action = select_action(self.policy, state, "deterministic" if deterministic else "stochastic", self.rng)
        return action.astype(np.float64)

    def noise(self, batch_size: int) -> np.ndarray:
        return self.rng.standard_normal((batch_size, self.action_dim), dtype=self.dtype)

    # -- losses (pure in the parameters; noise passed in for reproducibility) --

    def critic_target_values(self, batch: dict, noise) -> np.ndarray:
        c = self.config
        nxt = self.policy.sample(batch["next_states"], noise)
        q_next, _ = self.critic_target.forward(np.concatenate([batch["next_states"], nxt["action"]], axis=1))
        soft = np.min(q_next[..., 0], axis=0) - self.dtype.type(self.temperature) * nxt["log_prob"]
        return batch["rewards"] + c.gamma * (1.0 - batch["dones"]) * soft

    def critic_loss(self, batch: dict, target, params=None):
        """Sum over both critics of mean squared error to the shared target."""
        x = np.concatenate([batch["states"], batch["actions"]], axis=1)
        q, cache = self.critic.forward(x, params)
        diff = q[..., 0] - target[None, :]
        B = diff.shape[1]
        losses = np.mean(diff**2, axis=1)
        grads, _ = self.critic.backward(cache, (2.0 / B) * diff[..., None], params)
        return losses, grads

    def actor_loss(self, batch: dict, noise, params=None):
        """mean(temperature * log_prob - min(Q1, Q2)) with reparameterised actions."""
        states = batch["states"]
        draw = self.policy.sample(states, noise, params)
        x = np.concatenate([states, draw["action"]], axis=1)
        q, cache = self.critic.forward(x)
        q = q[..., 0]
        pick = np.argmin(q, axis=0)
        B = states.shape[0]
        q_min = q[pick, np.arange(B)]
        temp = self.dtype.type(self.temperature)
        loss = float(np.mean(temp * draw["log_prob"] - q_min))
        g_q = np.zeros_like(q)
        g_q[pick, np.arange(B)] = -1.0 / B
        _, g_x = self.critic.backward(cache, g_q[..., None], need_params=False)
        g_action = g_x[:, self.obs_dim:]
        grads = self.policy.backward(draw, g_action, np.full(B, temp / B, dtype=self.dtype), params)
        return loss, grads, draw

    def temperature_loss(self, log_prob, log_temperature=None):
        lt = self.log_temperature[0] if log_temperature is None else log_temperature
        slack = float(np.mean(log_prob + self.target_entropy))
        return float(-lt * slack), np.array([-slack])

    # -- updates --

    def critic_update(self, batch: dict, noise=None) -> dict:
        if noise is None:
            noise = self.noise(len(batch["rewards"]))
        target = self.critic_target_values(batch, noise)
        losses, grads = self.critic_loss(batch, target)
        self.critic_opt.step([flatten(grads)])
        return {"critic1": float(losses[0]), "critic2": float(losses[1])}

    def actor_and_temperature_update(self, batch: dict, noise=None) -> dict:
        if noise is None:
            noise = self.noise(len(batch["rewards"]))
        loss, grads, draw = self.actor_loss(batch, noise)
        self.actor_opt.step([flatten(grads)])
        t_loss, t_grad = self.temperature_loss(draw["log_prob"])
        self.temperature_opt.step([t_grad])
        return {"actor": loss, "temperature": t_loss, "entropy": float(-np.mean(draw["log_prob"]))}

    def soft_target_update(self, tau: float | None = None) -> None:
        soft_update([self.critic.flat], [self.critic_target.flat], self.config.tau if tau is None else tau)

    def update(self, batch: dict) -> dict:
        out = self.critic_update(batch)
        out.update(self.actor_and_temperature_update(batch))
        self.soft_target_update()
        self.updates += 1
        return out

    def policy_fn(self, deterministic: bool = True):
        """Callable EnvState -> action that applies the observation normaliser."""
        return lambda state: self.act(self.normalizer(state.vector()), deterministic)


def fit_normalizer(env: CurtailmentEnv, dataset: Dataset, days, rng: np.random.Generator,
                   n_days: int = 20) -> Normalizer:
    """Standardisation statistics from uniform-random rollouts on training days."""
    H = env.H
    states = []
    for _ in range(n_days):
        ep = sample_episode(dataset, days, rng)
        traj = rollout(env, lambda s: rng.uniform(0.0, 1.0, H), ep)
        states.append(traj.states)
    return Normalizer.fit(np.concatenate(states))


@dataclass
class TrainResult:
    agent: SACAgent
    curve: list[float] = field(default_factory=list)
    steps: int = 0


def train(env: CurtailmentEnv, dataset: Dataset, train_days, config: TrainConfig | None = None,
          seed: int = 0, progress=None) -> TrainResult:
    """Warm up with uniform-random actions, then one SAC update per env step.

    Returns the agent and the per-episode mean step reward of every complete
    episode. Bit-reproducible for a fixed seed and BLAS thread count.
    """
    config = config or TrainConfig()
    seeds = np.random.SeedSequence(seed).spawn(4)
    init_rng, episode_rng, action_rng, buffer_rng = (np.random.default_rng(s) for s in seeds)
    H = env.H
    normalizer = fit_normalizer(env, dataset, train_days, episode_rng, config.normalizer_days)
    agent = SACAgent(env.observation_size, H, config, action_rng, normalizer)
    buffer = ReplayBuffer(config.buffer_capacity, env.observation_size, H, agent.dtype)

    curve: list[float] = []
    step = 0
    while step < config.total_steps:
        state = env.reset(sample_episode(dataset, train_days, episode_rng))
        obs = normalizer(state.vector())
        rewards = []
        done = False
        while not done and step < config.total_steps:
            if step < config.warmup_steps:
                action = action_rng.uniform(0.0, 1.0, H)
            else:
                action = agent.act(obs)
            out = env.step(action)
            next_obs = normalizer(out.next_state.vector())
            buffer.add(obs, action, out.reward, next_obs, out.done)
            if step >= config.warmup_steps and buffer.size >= config.batch_size:
                agent.update(buffer.sample(config.batch_size, buffer_rng))
            rewards.append(out.reward)
            obs, done = next_obs, out.done
            step += 1
        if done:
            curve.append(float(np.mean(rewards)))
            if progress is not None:
                progress(step, curve[-1], agent)
    return TrainResult(agent, curve, step)


def random_policy_mean_reward(env: CurtailmentEnv, dataset: Dataset, days, seed: int = 0,
                              episodes: int = 20) -> float:
    rng = np.random.default_rng(seed)
    means = []
    for _ in range(episodes):
        traj = rollout(env, lambda s: rng.uniform(0.0, 1.0, env.H), sample_episode(dataset, days, rng))
        means.append(np.mean(traj.rewards))
    return float(np.mean(means))


# -- checkpoints --

def _encode(arrays):
    return [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in arrays]


def _decode(items):
    return [np.asarray(it["data"], dtype=float).reshape(it["shape"]) for it in items]


def save_checkpoint(path, agent: SACAgent, config: dict, config_hash: str) -> None:
    """Versioned JSON dump of every parameter, normaliser statistics and config."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "config": config,
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "train": agent.config.to_dict(),
        "normalizer": {"mean": agent.normalizer.mean.tolist(), "std": agent.normalizer.std.tolist()},
        "actor": _encode(agent.policy.params),
        "critic": _encode(agent.critic.params),
        "critic_target": _encode(agent.critic_target.params),
        "log_temperature": float(agent.log_temperature[0]),
        "updates": agent.updates,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[SACAgent, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    train_cfg = TrainConfig(**doc["train"])
    agent = SACAgent(doc["obs_dim"], doc["action_dim"], train_cfg, np.random.default_rng(0),
                     Normalizer(np.asarray(doc["normalizer"]["mean"]), np.asarray(doc["normalizer"]["std"])))
    for dst, src in ((agent.policy.params, doc["actor"]), (agent.critic.params, doc["critic"]),
                     (agent.critic_target.params, doc["critic_target"])):
        for d, s in zip(dst, _decode(src)):
            if d.shape != s.shape:
                raise CheckpointError(f"{path}: parameter shape {s.shape} does not match {d.shape}")
            d[...] = s
    agent.log_temperature[0] = doc["log_temperature"]
    agent.updates = doc.get("updates", 0)
    return agent, doc
