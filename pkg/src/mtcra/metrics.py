"""Per-episode throughput, collision rate and packet delay, plus aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

CSV_FIELDS = [
    "run_id", "policy", "N", "lambda_n", "seed", "episode", "K",
    "throughput", "collision_rate", "mean_delay", "undelivered_count",
]


@dataclass
class EpisodeMetrics:
    throughput: float
    collision_rate: float
    per_device_delay: dict = field(default_factory=dict)
    system_delay: Optional[float] = None
    slots_used: int = 0
    packets_activated: int = 0
    packets_delivered: int = 0
    undelivered_count: int = 0


def _feedback(o):
    return o["feedback"] if isinstance(o, dict) else o.feedback


def _n_success(o):
    s = o["successes"] if isinstance(o, dict) else o.successes
    return int(np.sum(s))


def throughput(outcomes: Sequence) -> float:
    """Delivered packets per slot over the episode."""
    if len(outcomes) == 0:
        raise ValueError("need at least one slot")
    return sum(_n_success(o) for o in outcomes) / len(outcomes)


def collision_rate(outcomes: Sequence, literal=False) -> float:
    """Fraction of slots with a collision.

    ``literal=True`` returns the mean feedback bit instead, i.e. the fraction
    of collision-free slots.
    """
    if len(outcomes) == 0:
        raise ValueError("need at least one slot")
    total = sum(_feedback(o) for o in outcomes)
    if not literal:
        total = len(outcomes) - total
    return total / len(outcomes)


def delays(buffered_slots, success_count):
    """Per-device mean packet delay and the system average.

    Returns ``(per_device, system_delay, undelivered)``. Devices that never
    delivered are left out of both averages; ``undelivered`` counts those that
    were buffered at some point. ``system_delay`` is None when nothing was
    delivered.
    """
    buffered_slots = np.asarray(buffered_slots)
    success_count = np.asarray(success_count)
    per_device = {
        int(n): float(buffered_slots[n]) / float(success_count[n])
        for n in np.flatnonzero(success_count > 0)
    }
    undelivered = int(np.sum((success_count == 0) & (buffered_slots > 0)))
    system = math.fsum(sorted(per_device.values())) / len(per_device) if per_device else None
    return per_device, system, undelivered


def episode_metrics(outcomes, env) -> EpisodeMetrics:
    """Metrics for a finished episode from its outcomes and final env state."""
    per_device, system, _ = delays(env.buffered_slots, env.success_count)
    delivered = int(env.success_count.sum())
    return EpisodeMetrics(
        throughput=throughput(outcomes),
        collision_rate=collision_rate(outcomes),
        per_device_delay=per_device,
        system_delay=system,
        slots_used=len(outcomes),
        packets_activated=int(env.packets_activated),
        packets_delivered=delivered,
        undelivered_count=int(env.packets_activated) - delivered,
    )


def mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    # sort first: the summary must not depend on episode order
    arr = np.sort(arr)
    mean = float(math.fsum(arr) / arr.size)
    std = float(np.sqrt(math.fsum((arr - mean) ** 2) / (arr.size - 1))) if arr.size > 1 else 0.0
    return mean, std


def aggregate(per_episode: Sequence[EpisodeMetrics]) -> dict:
    """Mean and sample standard deviation of each metric over episodes."""
    if not per_episode:
        raise ValueError("cannot aggregate an empty episode list")
    out = {"episodes": len(per_episode)}
    for name in ("throughput", "collision_rate"):
        out[name + "_mean"], out[name + "_std"] = mean_std([getattr(m, name) for m in per_episode])
    delays_ = [m.system_delay for m in per_episode if m.system_delay is not None]
    out["delay_mean"], out["delay_std"] = mean_std(delays_)
    out["delay_episodes"] = len(delays_)
    out["delay_undefined_episodes"] = len(per_episode) - len(delays_)
    out["undelivered_mean"], out["undelivered_std"] = mean_std(
        [m.undelivered_count for m in per_episode])
    return out


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def metrics_rows(per_episode, run_id, policy, n_devices, arrival_rate, seed, horizon):
    for i, m in enumerate(per_episode):
        yield {
            "run_id": run_id,
            "policy": policy,
            "N": n_devices,
            "lambda_n": arrival_rate,
            "seed": seed,
            "episode": i,
            "K": horizon,
            "throughput": m.throughput,
            "collision_rate": m.collision_rate,
            "mean_delay": m.system_delay,
            "undelivered_count": m.undelivered_count,
        }


def rows_to_csv(rows, fields=CSV_FIELDS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row[f]) for f in fields])
    return buf.getvalue()


def write_csv_atomic(path, text):
    """Write ``text`` to ``path`` via a temp file + rename; never appends."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
    return path


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("throughput", "collision_rate", "lambda_n"):
            r[key] = float(r[key])
        r["mean_delay"] = float(r["mean_delay"]) if r["mean_delay"] else None
        for key in ("N", "seed", "episode", "K", "undelivered_count"):
            r[key] = int(r[key])
    return rows
