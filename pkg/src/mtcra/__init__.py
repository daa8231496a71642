"""Multi-agent DQN random access for machine-type devices, with exponential
backoff baselines and a slotted ALOHA simulator."""

from ._accel import backend

__all__ = ["backend"]
__version__ = "0.1.0"
