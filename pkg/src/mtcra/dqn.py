"""Parameter-shared DQN random-access agent: replay, exploration, training.

One network is shared by every device. Each active device feeds its local
history through it and samples transmit/wait from a softmax over the Q-values
mixed with a uniform floor. Inactive devices contribute zero-masked
transitions to the shared replay memory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .env import EnvConfig, MtcEnv, SlotOutcome
from .policies import Policy
from .simulate import make_rng, run_policy

log = logging.getLogger(__name__)

N_ACTIONS = 2


@dataclass(frozen=True)
class RewardConfig:
    rho: float = 0.2
    # 0.9 teaches "always wait": the global reward plus the terminal cut on
    # success makes a departing packet look worse than an idle slot
    gamma: float = 0.3

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass(frozen=True)
class Exploration:
    beta: float
    epsilon: float


@dataclass(frozen=True)
class ExplorationSchedule:
    """Linear annealing of temperature (up) and epsilon (down) over episodes."""

    beta_start: float = 1.0
    beta_end: float = 15.0
    epsilon_start: float = 0.5
    epsilon_min: float = 0.1

    def __post_init__(self):
        if not 0 < self.beta_start <= self.beta_end:
            raise ValueError("need 0 < beta_start <= beta_end")
        if not 0 < self.epsilon_min <= self.epsilon_start < 1:
            raise ValueError("need 0 < epsilon_min <= epsilon_start < 1")

    def at(self, episode, n_episodes):
        frac = episode / (n_episodes - 1) if n_episodes > 1 else 1.0
        frac = min(max(frac, 0.0), 1.0)
        return Exploration(
            beta=self.beta_start + frac * (self.beta_end - self.beta_start),
            epsilon=self.epsilon_start + frac * (self.epsilon_min - self.epsilon_start),
        )

    @property
    def final(self):
        return Exploration(self.beta_end, self.epsilon_min)


@dataclass(frozen=True)
class DqnConfig:
    hidden: tuple = (150, 100)
    learning_rate: float = 1e-4
    batch_size: int = 8
    target_update: int = 100
    replay_capacity: int = 10_000
    episodes: int = 50
    terminal_on_success: bool = True
    inactive_transitions: str = "all"
    reward: RewardConfig = field(default_factory=RewardConfig)
    schedule: ExplorationSchedule = field(default_factory=ExplorationSchedule)

    def __post_init__(self):
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ValueError("hidden must be two positive layer widths")
        for name in ("batch_size", "target_update", "replay_capacity", "episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# -- action selection ---------------------------------------------------------


def action_probs(q_values, beta, epsilon):
    """Softmax(beta * Q) plus epsilon/|A|, renormalised by 1 + epsilon.

    Works on a single pair or on an ``(M, 2)`` array.
    """
    q = np.asarray(q_values, dtype=np.float64)
    z = beta * (q - q.max(axis=-1, keepdims=True))
    w = np.exp(z)
    w /= w.sum(axis=-1, keepdims=True)
    return (w + epsilon / q.shape[-1]) / (1.0 + epsilon)


def select_action(q_values, exploration: Exploration, rng) -> int:
    p = action_probs(q_values, exploration.beta, exploration.epsilon)
    return int(rng.random() < p[1])


def compute_reward(outcome: SlotOutcome, cfg: RewardConfig) -> float:
    """Global reward shared by every agent: successes minus rho * collisions."""
    return float(outcome.successes.sum()) - cfg.rho * float(outcome.collisions.sum())


def td_target(reward, next_state, target_net, gamma, terminal):
    if terminal:
        y = float(reward)
    else:
        q = nn.forward(target_net, np.atleast_2d(next_state))[0]
        y = float(reward) + gamma * float(q.max())
    if not np.isfinite(y):
        raise nn.DivergenceError("non-finite TD target")
    return y


def td_targets(rewards, next_states, terminals, target_net, gamma):
    """Batched :func:`td_target`."""
    q_next = nn.forward(target_net, next_states).max(axis=1)
    y = rewards + gamma * np.where(terminals, 0.0, q_next)
    if not np.all(np.isfinite(y)):
        raise nn.DivergenceError("non-finite TD target")
    return y


# -- replay -------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity FIFO of (s, a, r, s', terminal), sampled uniformly."""

    def __init__(self, capacity, state_dim):
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, state_dim))
        self.next_states = np.zeros((self.capacity, state_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.terminals = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def push_many(self, states, actions, rewards, next_states, terminals):
        n = len(actions)
        if n > self.capacity:
            # only the newest `capacity` rows would survive anyway
            sl = slice(n - self.capacity, n)
            states, actions, next_states = states[sl], actions[sl], next_states[sl]
            rewards = np.broadcast_to(rewards, (n,))[sl]
            terminals = terminals[sl]
            n = self.capacity
        idx = (self._head + np.arange(n)) % self.capacity
        self.states[idx] = states
        self.actions[idx] = actions
        self.rewards[idx] = rewards
        self.next_states[idx] = next_states
        self.terminals[idx] = terminals
        self._head = int((self._head + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def push(self, state, action, reward, next_state, terminal=False):
        self.push_many(np.atleast_2d(state), np.array([action]), np.array([reward], dtype=float),
                       np.atleast_2d(next_state), np.array([terminal]))

    def sample_indices(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size, rng):
        i = self.sample_indices(batch_size, rng)
        return self.states[i], self.actions[i], self.rewards[i], self.next_states[i], self.terminals[i]


# -- policy wrapper -------------------------------------------------------------


class DqnPolicy(Policy):
    """Runs the shared network on active devices' zero-masked histories."""

    name = "dqn"

    def __init__(self, net: nn.Mlp, exploration: Exploration):
        self.net = net
        self.exploration = exploration
        self.last_states = None

    def act(self, env, rng):
        states = env.observe_all()
        self.last_states = states
        u = rng.random(env.n)
        actions = np.zeros(env.n, dtype=np.int8)
        active = np.flatnonzero(env.buffers)
        if active.size:
            q = nn.forward(self.net, states[active])
            p = action_probs(q, self.exploration.beta, self.exploration.epsilon)
            actions[active] = u[active] < p[:, 1]
        return actions


# -- training -----------------------------------------------------------------


def _replay_rows(states, env, seen, mode):
    active = states[:, -1] > 0
    if mode == "all":
        return np.arange(env.n)
    if mode == "departed":
        return np.flatnonzero(active | seen)
    if mode == "none":
        return np.flatnonzero(active)
    raise ValueError(f"unknown inactive_transitions mode {mode!r}")


@dataclass
class TrainResult:
    net: nn.Mlp
    log: list
    train_steps: int
    max_replay_size: int
    replay: Optional[ReplayBuffer] = None


def train(env_cfg: EnvConfig, hyper: DqnConfig, seed=0, net: Optional[nn.Mlp] = None,
          on_episode=None) -> TrainResult:
    """Episodic training loop with experience replay and a target network.

    Returns the trained network plus one log row per episode with the
    episode's cumulative (summed) reward, its running average, the
    exploration values used and the mean training loss.
    """
    n = env_cfg.n_devices
    env = MtcEnv(env_cfg, make_rng(seed, "train", n, "activation"))
    act_rng = make_rng(seed, "train", n, "action")
    replay_rng = make_rng(seed, "train", n, "replay")
    sizes = (env_cfg.state_dim, *hyper.hidden, N_ACTIONS)
    if net is None:
        net = nn.Mlp.init(sizes, make_rng(seed, "train", n, "init"))
    elif net.sizes != sizes:
        raise ValueError(f"network sizes {net.sizes} do not match {sizes}")
    target = nn.clone_into_target(net)
    opt = nn.Adam(net.n_params, lr=hyper.learning_rate)
    replay = ReplayBuffer(hyper.replay_capacity, env_cfg.state_dim)
    policy = DqnPolicy(net, hyper.schedule.at(0, hyper.episodes))
    rcfg = hyper.reward

    rows = []
    steps = 0
    max_size = 0
    running = 0.0
    for ep in range(hyper.episodes):
        policy.exploration = hyper.schedule.at(ep, hyper.episodes)
        env.reset()
        env.activate_episode()
        seen = np.zeros(n, dtype=bool)
        total = 0.0
        losses = []
        for _ in range(env_cfg.horizon):
            env.begin_slot()
            actions = policy.act(env, act_rng)
            states = policy.last_states
            outcome = env.step(actions)
            reward = compute_reward(outcome, rcfg)
            total += reward
            next_states = env.observe_all()
            rows_ = _replay_rows(states, env, seen, hyper.inactive_transitions)
            replay.push_many(states[rows_], outcome.actions[rows_].astype(np.int64),
                             np.full(rows_.size, reward), next_states[rows_],
                             (outcome.successes[rows_] == 1) & hyper.terminal_on_success)
            seen |= states[:, -1] > 0
            max_size = max(max_size, len(replay))

            if len(replay) >= hyper.batch_size:
                s, a, r, s2, term = replay.sample(hyper.batch_size, replay_rng)
                try:
                    y = td_targets(r, s2, term, target, rcfg.gamma)
                    loss, grad = nn.loss_and_gradient(net, s, a, y)
                    if not np.isfinite(loss):
                        raise nn.DivergenceError("non-finite loss")
                    nn.step(net, opt, grad)
                except nn.DivergenceError as exc:
                    err = nn.DivergenceError(f"training diverged in episode {ep}: {exc}")
                    err.episode = ep
                    raise err from None
                losses.append(loss)
                steps += 1
                if steps % hyper.target_update == 0:
                    nn.clone_into_target(net, target)

        running += (total - running) / (ep + 1)
        row = {
            "episode": ep,
            "cumulative_reward": total,
            "mean_cumulative_reward": running,
            "beta": policy.exploration.beta,
            "epsilon": policy.exploration.epsilon,
            "loss": float(np.mean(losses)) if losses else None,
        }
        rows.append(row)
        if on_episode is not None:
            on_episode(row)
        log.debug("episode %d reward %.3f", ep, total)
    return TrainResult(net=net, log=rows, train_steps=steps, max_replay_size=max_size, replay=replay)


def evaluate(net: nn.Mlp, env_cfg: EnvConfig, episodes=50, seed=0,
             exploration: Optional[Exploration] = None, trace=False):
    """Frozen-network test episodes; no replay, no updates."""
    policy = DqnPolicy(net, exploration or ExplorationSchedule().final)
    return run_policy(env_cfg, policy, episodes, seed, trace=trace)
