"""Seeded random streams and the generic episode driver."""

from __future__ import annotations

import numpy as np

from .env import MtcEnv
from .metrics import episode_metrics

PHASES = {"train": 0, "eval": 1}
STREAMS = {"activation": 0, "action": 1, "replay": 2, "init": 3}


def make_rng(seed, phase, n_devices, stream):
    """Independent generator per (seed, phase, N, stream).

    Activation draws for a given (seed, phase, N) are identical whatever the
    policy, which is what makes policy comparisons matched.
    """
    entropy = [int(seed), PHASES[phase], int(n_devices), STREAMS[stream]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def run_episode(env: MtcEnv, policy, rng):
    """One episode: reset, activate, K slots. Returns (outcomes, metrics)."""
    env.reset()
    env.activate_episode()
    policy.reset(env)
    outcomes = []
    for _ in range(env.config.horizon):
        env.begin_slot()
        actions = policy.act(env, rng)
        outcome = env.step(actions)
        policy.update(env, outcome)
        outcomes.append(outcome)
    return outcomes, episode_metrics(outcomes, env)


def run_policy(env_cfg, policy, episodes, seed, trace=False):
    """Evaluate a policy over ``episodes`` matched-seed episodes."""
    env = MtcEnv(env_cfg, make_rng(seed, "eval", env_cfg.n_devices, "activation"), trace=trace)
    rng = make_rng(seed, "eval", env_cfg.n_devices, "action")
    results = []
    traces = []
    for _ in range(episodes):
        _, m = run_episode(env, policy, rng)
        results.append(m)
        if trace:
            traces.append(list(env.trace))
    return (results, traces) if trace else results
