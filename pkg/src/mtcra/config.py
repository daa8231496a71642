"""Experiment configuration: a flat, typed ``key = value`` text format.

Example::

    # comment
    policy = dqn
    n_devices_list = 50, 100
    reward.gamma = 0.3
    env.horizon = auto

Unknown keys are rejected so that typos in sweeps fail loudly. ``policy`` and
``n_devices_list`` must appear in every file; everything else falls back to
the defaults below.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .dqn import DqnConfig, ExplorationSchedule, RewardConfig
from .env import EnvConfig
from .policies import EbConfig

POLICIES = ("dqn", "bnseb", "bseb", "nseb", "seb")
REQUIRED_KEYS = ("policy", "n_devices_list")


class ConfigError(ValueError):
    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def _parse_bool(s):
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_int_list(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _parse_str_list(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _parse_opt_int(s):
    return None if s.lower() in ("auto", "none", "") else int(s)


def _fmt_list(v):
    return ", ".join(str(x) for x in v)


# kind -> (parser, formatter)
_TYPES = {
    "str": (str, str),
    "int": (int, str),
    "float": (float, repr),
    "bool": (_parse_bool, lambda v: "true" if v else "false"),
    "int_list": (_parse_int_list, _fmt_list),
    "str_list": (_parse_str_list, _fmt_list),
    "opt_int": (_parse_opt_int, lambda v: "auto" if v is None else str(v)),
}

# file key -> (attribute, kind)
_KEYS = {
    "policy": ("policy", "str"),
    "n_devices_list": ("n_devices_list", "int_list"),
    "episodes": ("episodes", "int"),
    "train_episodes": ("train_episodes", "int"),
    "seed": ("seed", "int"),
    "output_dir": ("output_dir", "str"),
    "compare_policies": ("compare_policies", "str_list"),
    "env.arrival_rate": ("arrival_rate", "float"),
    "env.horizon": ("horizon", "opt_int"),
    "env.history_size": ("history_size", "int"),
    "env.per_slot_arrivals": ("per_slot_arrivals", "bool"),
    "eb.sigma": ("sigma", "float"),
    "eb.p_min": ("p_min", "float"),
    "eb.p_max": ("p_max", "float"),
    "reward.rho": ("rho", "float"),
    "reward.gamma": ("gamma", "float"),
    "schedule.beta_start": ("beta_start", "float"),
    "schedule.beta_end": ("beta_end", "float"),
    "schedule.epsilon_start": ("epsilon_start", "float"),
    "schedule.epsilon_min": ("epsilon_min", "float"),
    "dqn.hidden": ("hidden", "int_list"),
    "dqn.learning_rate": ("learning_rate", "float"),
    "dqn.batch_size": ("batch_size", "int"),
    "dqn.target_update": ("target_update", "int"),
    "dqn.replay_capacity": ("replay_capacity", "int"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    policy: str = "dqn"
    n_devices_list: tuple = (50, 100, 500)
    episodes: int = 50          # test episodes per N
    train_episodes: int = 50    # 0 saves the freshly initialised network
    seed: int = 0
    output_dir: str = "runs"
    compare_policies: tuple = ("dqn", "bnseb", "bseb")
    arrival_rate: float = 0.05
    horizon: Optional[int] = None
    history_size: int = 5
    per_slot_arrivals: bool = False
    sigma: float = 2.0
    p_min: float = 0.001
    p_max: float = 0.9
    rho: float = 0.2
    gamma: float = RewardConfig.gamma
    beta_start: float = 1.0
    beta_end: float = 15.0
    epsilon_start: float = 0.5
    epsilon_min: float = 0.1
    hidden: tuple = (150, 100)
    learning_rate: float = 1e-4
    batch_size: int = 8
    target_update: int = 100
    replay_capacity: int = 10_000

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}", "policy")
        for p in self.compare_policies:
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r}", "compare_policies")
        if not self.n_devices_list:
            raise ConfigError("need at least one N", "n_devices_list")
        if self.episodes < 1:
            raise ConfigError("must be >= 1", "episodes")
        if self.train_episodes < 0:
            raise ConfigError("must be >= 0", "train_episodes")
        if self.seed < 0:
            raise ConfigError("must be >= 0", "seed")
        # sub-configs carry their own invariants
        for n in self.n_devices_list:
            self._checked("env", lambda: self.env_config(n))
        self._checked("eb", self.eb_config)
        self._checked("reward", self.reward_config)
        self._checked("schedule", self.schedule)
        self._checked("dqn", self.dqn_config)

    @staticmethod
    def _checked(section, build):
        try:
            build()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), section) from None

    # -- sub-configs ------------------------------------------------------

    def env_config(self, n_devices, rng_seed=None) -> EnvConfig:
        return EnvConfig(n_devices=n_devices, arrival_rate=self.arrival_rate, horizon=self.horizon,
                         history_size=self.history_size,
                         rng_seed=self.seed if rng_seed is None else rng_seed,
                         per_slot_arrivals=self.per_slot_arrivals)

    def eb_config(self, symmetric=False) -> EbConfig:
        return EbConfig(sigma=self.sigma, p_min=self.p_min, p_max=self.p_max, symmetric=symmetric)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(rho=self.rho, gamma=self.gamma)

    def schedule(self) -> ExplorationSchedule:
        return ExplorationSchedule(self.beta_start, self.beta_end, self.epsilon_start, self.epsilon_min)

    def dqn_config(self) -> DqnConfig:
        return DqnConfig(hidden=tuple(self.hidden), learning_rate=self.learning_rate,
                         batch_size=self.batch_size, target_update=self.target_update,
                         replay_capacity=self.replay_capacity, episodes=max(self.train_episodes, 1),
                         reward=self.reward_config(), schedule=self.schedule())

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    # -- text form ----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for key, (attr, kind) in _KEYS.items():
            lines.append(f"{key} = {_TYPES[kind][1](getattr(self, attr))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _KEYS:
                raise ConfigError("unknown key", key)
            attr, kind = _KEYS[key]
            if attr in values:
                raise ConfigError("duplicate key", key)
            try:
                values[attr] = _TYPES[kind][0](value)
            except ValueError as exc:
                raise ConfigError(f"bad {kind} value {value!r} ({exc})", key) from None
        for key in REQUIRED_KEYS:
            if _KEYS[key][0] not in values:
                raise ConfigError("missing required key", key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

