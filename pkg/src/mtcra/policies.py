"""Exponential-backoff baselines and the policy interface used by the driver.

Two flavours of probability-based backoff:

* non-symmetric (nSEB): each device divides its own transmit probability by
  ``sigma`` after each of its own collisions and resets to ``p_max`` after its
  own success; silent devices keep their probability.
* symmetric (SEB): one shared probability, divided by ``sigma`` after a
  collision slot and multiplied by ``sigma`` after any other slot, driven by
  the broadcast feedback bit.

With ``sigma = 2`` these are the binary variants BnSEB and BSEB.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class EbConfig:
    sigma: float = 2.0
    p_min: float = 0.001
    p_max: float = 0.9
    symmetric: bool = False

    def __post_init__(self):
        if not self.sigma > 1.0:
            raise ValueError("sigma must be > 1")
        if not 0.0 < self.p_min < 1.0:
            raise ValueError("p_min must lie in (0, 1)")
        if not self.p_min < self.p_max <= 1.0:
            raise ValueError("p_max must lie in (p_min, 1]")


@dataclass(frozen=True)
class EbState:
    """Per-device probabilities (nSEB) or one shared probability (SEB)."""

    config: EbConfig
    probs: np.ndarray

    @classmethod
    def initial(cls, config, n_devices):
        size = 1 if config.symmetric else n_devices
        return cls(config, np.full(size, config.p_max))

    def prob(self, device):
        return float(self.probs[0] if self.config.symmetric else self.probs[device])


def _backoff(p, cfg):
    return max(p / cfg.sigma, cfg.p_min)


def nseb_update(state: EbState, device: int, collided: int) -> EbState:
    cfg = state.config
    if cfg.symmetric:
        raise ValueError("nseb_update needs a non-symmetric state")
    probs = state.probs.copy()
    probs[device] = _backoff(probs[device], cfg) if collided else cfg.p_max
    return replace(state, probs=probs)


def seb_update(state: EbState, collision_occurred: int) -> EbState:
    cfg = state.config
    if not cfg.symmetric:
        raise ValueError("seb_update needs a symmetric state")
    p = float(state.probs[0])
    p = _backoff(p, cfg) if collision_occurred else min(cfg.sigma * p, cfg.p_max)
    return replace(state, probs=np.array([p]))


def eb_act(state: EbState, device: int, buffer: int, rng) -> int:
    if not buffer:
        return 0
    return int(rng.random() < state.prob(device))


class Policy:
    """Driver protocol: ``reset`` per episode, then ``act``/``update`` per slot."""

    name = "policy"

    def reset(self, env):
        pass

    def act(self, env, rng) -> np.ndarray:
        raise NotImplementedError

    def update(self, env, outcome):
        pass


class ExponentialBackoff(Policy):
    """Vectorised nSEB/SEB over all N devices."""

    def __init__(self, config: EbConfig, name=None):
        self.config = config
        self.name = name or ("seb" if config.symmetric else "nseb")
        self.state = None

    def reset(self, env):
        self.state = EbState.initial(self.config, env.n)

    def transmit_probs(self, env):
        if self.config.symmetric:
            return np.full(env.n, self.state.probs[0])
        return self.state.probs

    def act(self, env, rng):
        # one uniform per device every slot, so rng consumption is policy-independent
        u = rng.random(env.n)
        return ((u < self.transmit_probs(env)) & (env.buffers == 1)).astype(np.int8)

    def update(self, env, outcome):
        cfg = self.config
        if cfg.symmetric:
            self.state = seb_update(self.state, 1 - outcome.feedback)
            return
        probs = self.state.probs
        hit = outcome.collisions == 1
        probs[hit] = np.maximum(probs[hit] / cfg.sigma, cfg.p_min)
        probs[outcome.successes == 1] = cfg.p_max


def make_baseline(name, sigma=2.0, p_min=0.001, p_max=0.9):
    """Build one of ``bnseb``, ``bseb``, ``nseb``, ``seb``."""
    name = name.lower()
    if name in ("bnseb", "bseb"):
        sigma = 2.0
    if name not in ("bnseb", "bseb", "nseb", "seb"):
        raise ValueError(f"unknown baseline policy {name!r}")
    symmetric = name in ("bseb", "seb")
    return ExponentialBackoff(EbConfig(sigma, p_min, p_max, symmetric), name=name)
