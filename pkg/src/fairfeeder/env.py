"""Episodic curtailment environment: one central agent sets every household's α.

Observation per household, in this order: previous net power, current load,
current generation, previous voltage, and (accumulative horizon only) the
running curtailed power sum.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EpisodeBatch
from .fairness import STEP_HOURS, CurtailmentProfile, FairnessCase, Horizon, dispatch, instant_penalty
from .feeder import FeederModel, simulate_timestep, voltage_violation
from .tariff import SLOTS_PER_DAY


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 100.0
    w2: float = 1.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("reward weights must be non-negative")


@dataclass(frozen=True)
class EnvState:
    t: int
    prev_net_power: np.ndarray
    load_now: np.ndarray
    gen_now: np.ndarray
    prev_voltage: np.ndarray
    accumulated_curtailment: np.ndarray | None = None

    def vector(self) -> np.ndarray:
        parts = [self.prev_net_power, self.load_now, self.gen_now, self.prev_voltage]
        if self.accumulated_curtailment is not None:
            parts.append(self.accumulated_curtailment)
        return np.concatenate(parts)


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    voltages: np.ndarray
    curtailed_energy: np.ndarray
    done: bool
    net_power: np.ndarray = None
    reactive: np.ndarray = None
    fairness_penalty: float = 0.0


def voltage_penalty(v):
    """Distance of a voltage (p.u.) outside [0.95, 1.05]."""
    return voltage_violation(v)


def observation_size(household_count: int, horizon: Horizon) -> int:
    return (5 if Horizon(horizon) is Horizon.ACCUMULATIVE else 4) * household_count


class CurtailmentEnv:
    """Not thread-safe; use one instance per worker."""

    episode_length = SLOTS_PER_DAY

    def __init__(self, model: FeederModel, case: FairnessCase, weights: RewardWeights | None = None):
        self.model = model
        self.case = case
        self.weights = weights or RewardWeights()
        self.H = model.household_count
        self._episode: EpisodeBatch | None = None
        self._state: EnvState | None = None
        self._alpha = None

    @property
    def accumulative(self) -> bool:
        return self.case.horizon is Horizon.ACCUMULATIVE

    @property
    def observation_size(self) -> int:
        return observation_size(self.H, self.case.horizon)

    @property
    def state(self) -> EnvState:
        return self._state

    def reset(self, episode: EpisodeBatch) -> EnvState:
        if episode.household_count != self.H:
            raise ValueError(f"episode has {episode.household_count} households, feeder has {self.H}")
        self._episode = episode
        self._alpha = np.zeros((self.episode_length, self.H))
        self._state = EnvState(
            t=0,
            prev_net_power=np.zeros(self.H),
            load_now=episode.load[0].copy(),
            gen_now=episode.generation[0].copy(),
            prev_voltage=np.ones(self.H),
            accumulated_curtailment=np.zeros(self.H) if self.accumulative else None,
        )
        return self._state

    def profile(self, upto: int | None = None) -> CurtailmentProfile:
        stop = self.episode_length if upto is None else upto
        ep = self._episode
        return CurtailmentProfile(self._alpha[:stop], ep.generation[:stop], ep.load[:stop])

    def step(self, action) -> StepOutcome:
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        state = self._state
        t = state.t
        if t >= self.episode_length:
            raise RuntimeError("episode already finished")
        alpha = np.clip(np.asarray(action, dtype=float), 0.0, 1.0)
        if alpha.shape != (self.H,):
            raise ValueError(f"action must have {self.H} entries, got shape {alpha.shape}")
        self._alpha[t] = alpha
        gen, load = state.gen_now, state.load_now

        flow, reactive, _ = simulate_timestep(self.model, gen, load, alpha, state.prev_voltage)
        v = flow.household_voltage
        net = gen * (1.0 - alpha) - load
        done = t == self.episode_length - 1

        penalty = 0.0
        if not self.accumulative:
            penalty = instant_penalty(self.case, gen, load, alpha)
        elif done:
            penalty = dispatch(self.case, self.profile())
        w = self.weights
        reward = float(np.sum((1.0 - alpha) - w.w1 * voltage_penalty(v)) - w.w2 * penalty)

        nt = t + 1
        ep = self._episode
        nxt_load = ep.load[nt].copy() if not done else np.zeros(self.H)
        nxt_gen = ep.generation[nt].copy() if not done else np.zeros(self.H)
        acc = None
        if self.accumulative:
            acc = state.accumulated_curtailment + alpha * gen
        self._state = EnvState(nt, net, nxt_load, nxt_gen, v.copy(), acc)
        return StepOutcome(
            next_state=self._state,
            reward=reward,
            voltages=v.copy(),
            curtailed_energy=alpha * gen * STEP_HOURS,
            done=done,
            net_power=net,
            reactive=reactive,
            fairness_penalty=penalty,
        )


@dataclass
class Trajectory:
    states: np.ndarray  # (48, obs)
    actions: np.ndarray  # (48, H)
    rewards: np.ndarray  # (48,)
    voltages: np.ndarray  # (48, H)
    net_power: np.ndarray  # (48, H)
    profile: CurtailmentProfile
    next_states: np.ndarray = None
    dones: np.ndarray = None
    day_index: int = -1
    penalties: np.ndarray = field(default=None)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    def rows(self):
        T, H = self.actions.shape
        for t in range(T):
            for h in range(H):
                yield (t, h, self.actions[t, h], self.voltages[t, h], self.net_power[t, h], self.rewards[t])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "household", "alpha", "voltage", "net_kw", "reward"])
            for row in self.rows():
                w.writerow([row[0], row[1], *(repr(float(x)) for x in row[2:])])


def rollout(env: CurtailmentEnv, policy, episode: EpisodeBatch) -> Trajectory:
    """Run ``policy`` (EnvState -> action) through one full episode."""
    state = env.reset(episode)
    states, next_states, actions, rewards, volts, nets, dones, pens = [], [], [], [], [], [], [], []
    done = False
    while not done:
        action = np.clip(np.asarray(policy(state), dtype=float), 0.0, 1.0)
        out = env.step(action)
        states.append(state.vector())
        actions.append(action)
        rewards.append(out.reward)
        volts.append(out.voltages)
        nets.append(out.net_power)
        next_states.append(out.next_state.vector())
        dones.append(out.done)
        pens.append(out.fairness_penalty)
        state, done = out.next_state, out.done
    return Trajectory(
        states=np.array(states),
        actions=np.array(actions),
        rewards=np.array(rewards),
        voltages=np.array(volts),
        net_power=np.array(nets),
        profile=env.profile(),
        next_states=np.array(next_states),
        dones=np.array(dones),
        day_index=episode.day_index,
        penalties=np.array(pens),
    )
