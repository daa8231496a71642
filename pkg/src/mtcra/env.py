"""Slot-synchronised MTC network with a single collision channel.

Devices hold at most one packet. In every slot the active devices decide
whether to transmit, the receiver broadcasts one feedback bit (0 on
collision, 1 otherwise) and each device derives its own success/collision
event from that bit and its own action.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class EnvConfig:
    n_devices: int
    arrival_rate: float = 0.05
    horizon: Optional[int] = None
    history_size: int = 5
    rng_seed: int = 0
    per_slot_arrivals: bool = False

    def __post_init__(self):
        if int(self.n_devices) < 1:
            raise ValueError("n_devices must be >= 1")
        if not 0.0 < self.arrival_rate <= 1.0:
            raise ValueError("arrival_rate must lie in (0, 1]")
        if int(self.history_size) < 1:
            raise ValueError("history_size must be >= 1")
        if self.horizon is None:
            object.__setattr__(self, "horizon", default_horizon(self.n_devices, self.arrival_rate))
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @property
    def state_dim(self):
        return 2 * self.history_size + 1


def default_horizon(n_devices, arrival_rate):
    """Episode length K = 4 * lambda * N, rounded, at least one slot."""
    return max(1, int(round(4.0 * arrival_rate * n_devices)))


@dataclass(frozen=True)
class LocalHistory:
    """Last ``h`` (action, feedback) pairs, oldest first, plus the buffer bit."""

    pairs: tuple
    buffer_bit: int

    @classmethod
    def zeros(cls, h):
        return cls(pairs=((0, 0),) * h, buffer_bit=0)

    @classmethod
    def from_vector(cls, vec):
        vec = [int(v) for v in vec]
        pairs = tuple((vec[i], vec[i + 1]) for i in range(0, len(vec) - 1, 2))
        return cls(pairs=pairs, buffer_bit=vec[-1])

    def to_vector(self):
        flat = [bit for pair in self.pairs for bit in pair]
        flat.append(self.buffer_bit)
        return np.asarray(flat, dtype=np.float64)


@dataclass(frozen=True)
class DeviceState:
    buffer: int
    history: LocalHistory
    buffered_slots: int
    success_count: int


@dataclass(frozen=True)
class SlotOutcome:
    actions: np.ndarray
    feedback: int
    successes: np.ndarray
    collisions: np.ndarray
    transmit_count: int

    def to_record(self):
        return {
            "actions": self.actions.tolist(),
            "feedback": self.feedback,
            "successes": self.successes.tolist(),
            "collisions": self.collisions.tolist(),
            "transmit_count": self.transmit_count,
        }


class PolicyError(ValueError):
    """An action vector asked an empty buffer to transmit."""


def resolve_slot(actions, buffers):
    """Apply the collision channel to one slot of actions."""
    actions = np.asarray(actions, dtype=np.int8)
    buffers = np.asarray(buffers, dtype=np.int8)
    if actions.shape != buffers.shape or actions.ndim != 1:
        raise ValueError("actions and buffers must be 1-D arrays of equal length")
    if np.any((actions != 0) & (actions != 1)):
        raise ValueError("actions must be bits")
    bad = np.flatnonzero(actions > buffers)
    if bad.size:
        raise PolicyError(f"devices {bad.tolist()} transmit from an empty buffer")

    count = int(actions.sum())
    feedback = 0 if count >= 2 else 1
    # g: (F, A_n) -> (C_n, G_n), evaluated locally per device
    successes = (actions * feedback).astype(np.int8)
    collisions = (actions * (1 - feedback)).astype(np.int8)
    return SlotOutcome(actions=actions, feedback=feedback, successes=successes,
                       collisions=collisions, transmit_count=count)


class MtcEnv:
    """Mutable network state for one run; owns no state shared across runs."""

    def __init__(self, config: EnvConfig, rng: np.random.Generator, trace=False):
        self.config = config
        self.rng = rng
        self.n = int(config.n_devices)
        self.h = int(config.history_size)
        self.buffers = np.zeros(self.n, dtype=np.int8)
        self.history = np.zeros((self.n, self.h, 2), dtype=np.int8)
        self.buffered_slots = np.zeros(self.n, dtype=np.int64)
        self.success_count = np.zeros(self.n, dtype=np.int64)
        self.slot = 0
        self.packets_activated = 0
        self.clamp_count = 0
        self.tracing = trace
        self.trace: list[dict] = []
        self._pending_arrivals: list[int] = []

    # -- episode lifecycle -------------------------------------------------

    def reset(self):
        self.buffers[:] = 0
        self.history[:] = 0
        self.buffered_slots[:] = 0
        self.success_count[:] = 0
        self.slot = 0
        self.packets_activated = 0
        self.trace = []
        self._pending_arrivals = []

    def activate_episode(self):
        """Wake a Poisson(lambda * N) number of distinct devices, clamped to N."""
        draw = int(self.rng.poisson(self.config.arrival_rate * self.n))
        if draw > self.n:
            self.clamp_count += 1
        return self._activate_count(min(draw, self.n))

    def _activate_count(self, count):
        idx = np.sort(self.rng.choice(self.n, size=count, replace=False)) if count else np.empty(0, np.int64)
        self._wake(idx)
        return set(int(i) for i in idx)

    def _wake(self, idx):
        self.buffers[idx] = 1
        self.history[idx] = 0
        self.packets_activated += len(idx)
        self._pending_arrivals.extend(int(i) for i in idx)

    def begin_slot(self):
        """Per-slot Bernoulli arrivals at idle devices (optional mode only)."""
        if not self.config.per_slot_arrivals:
            return []
        idle = np.flatnonzero(self.buffers == 0)
        fresh = idle[self.rng.random(idle.size) < self.config.arrival_rate]
        self._wake(fresh)
        return fresh.tolist()

    # -- per slot ------------------------------------------------------------

    def commit_slot(self, outcome: SlotOutcome):
        was_active = self.buffers == 1
        self.buffered_slots += was_active
        self.success_count += outcome.successes
        if self.h > 1:
            self.history[was_active, :-1] = self.history[was_active, 1:]
        self.history[was_active, -1, 0] = outcome.actions[was_active]
        self.history[was_active, -1, 1] = outcome.feedback
        self.buffers[outcome.successes == 1] = 0

        if self.tracing:
            rec = {"slot": self.slot, "arrivals": self._pending_arrivals}
            rec.update(outcome.to_record())
            self.trace.append(rec)
        self._pending_arrivals = []
        self.slot += 1

    def step(self, actions):
        outcome = resolve_slot(actions, self.buffers)
        self.commit_slot(outcome)
        return outcome

    # -- observation ---------------------------------------------------------

    def observe(self, device):
        if not 0 <= device < self.n:
            raise IndexError(f"device {device} out of range [0, {self.n})")
        if self.buffers[device] == 0:
            return LocalHistory.zeros(self.h)
        pairs = tuple((int(a), int(f)) for a, f in self.history[device])
        return LocalHistory(pairs=pairs, buffer_bit=1)

    def observe_all(self):
        """Zero-masked state matrix, shape ``(N, 2h + 1)``."""
        out = np.zeros((self.n, 2 * self.h + 1))
        active = self.buffers == 1
        out[active, :-1] = self.history[active].reshape(-1, 2 * self.h)
        out[active, -1] = 1.0
        return out

    def device_state(self, device):
        pairs = tuple((int(a), int(f)) for a, f in self.history[device])
        return DeviceState(
            buffer=int(self.buffers[device]),
            history=LocalHistory(pairs=pairs, buffer_bit=int(self.buffers[device])),
            buffered_slots=int(self.buffered_slots[device]),
            success_count=int(self.success_count[device]),
        )

    @property
    def active(self):
        return np.flatnonzero(self.buffers)


def write_trace(path, records, header=None):
    """JSON-lines slot trace; an optional header line comes first."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    tmp.replace(path)


def read_trace(path):
    header = None
    records = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if "header" in rec:
                header = rec["header"]
            else:
                records.append(rec)
    return header, records
