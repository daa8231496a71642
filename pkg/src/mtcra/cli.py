"""Command line harness: ``train``, ``eval`` and ``compare``.

Every command writes into ``output_dir``::

    config.txt                      effective configuration
    checkpoints/dqn_N{N}.npz        train
    reward_curve_N{N}.csv           train
    metrics_{policy}.csv            eval (one row per episode, all N)
    compare.csv                     compare (all policies, all N)
    plot_{metric}.csv               compare (x = N, y = mean, series = policy)
    traces/{policy}_N{N}.jsonl      eval/compare with --trace

Files are replaced atomically; a rerun never appends. On failure one JSON
error line goes to stderr and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dqn, nn
from ._accel import backend
from .config import ConfigError, ExperimentConfig
from .env import write_trace
from .metrics import CSV_FIELDS, mean_std, metrics_rows, rows_to_csv, write_csv_atomic
from .policies import make_baseline
from .simulate import make_rng, run_policy

log = logging.getLogger("mtcra")

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_ARCHITECTURE = 4
EXIT_DIVERGED = 5

REWARD_FIELDS = ["episode", "mean_cumulative_reward", "cumulative_reward", "beta", "epsilon", "loss"]
PLOT_METRICS = {
    "throughput": "throughput",
    "collision_rate": "collision_rate",
    "delay": "mean_delay",
}
PLOT_FIELDS = ["N", "policy", "mean", "std", "episodes"]


class CliError(Exception):
    def __init__(self, kind, message, code, **extra):
        super().__init__(message)
        self.kind = kind
        self.code = code
        self.extra = extra

    def line(self):
        return json.dumps({"status": "error", "kind": self.kind, "message": str(self), **self.extra},
                          sort_keys=True)


def checkpoint_path(checkpoint_dir, n_devices):
    return Path(checkpoint_dir) / f"dqn_N{n_devices}.npz"


def _write_config(cfg: ExperimentConfig):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_atomic(out / "config.txt", cfg.to_text())


# -- train ----------------------------------------------------------------------


def run_train(cfg: ExperimentConfig):
    """Train one shared network per N; returns the checkpoint paths."""
    if cfg.policy != "dqn":
        raise CliError("config", "train needs policy = dqn", EXIT_CONFIG, key="policy")
    _write_config(cfg)
    out = Path(cfg.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    hyper = cfg.dqn_config()
    paths = []
    for n in cfg.n_devices_list:
        env_cfg = cfg.env_config(n)
        if cfg.train_episodes == 0:
            net = nn.Mlp.init((env_cfg.state_dim, *hyper.hidden, dqn.N_ACTIONS),
                              make_rng(cfg.seed, "train", n, "init"))
            rows = []
        else:
            try:
                result = dqn.train(env_cfg, hyper, seed=cfg.seed)
            except nn.DivergenceError as exc:
                raise CliError("diverged", str(exc), EXIT_DIVERGED, N=n,
                               episode=getattr(exc, "episode", None)) from None
            net, rows = result.net, result.log
            log.info("N=%d trained: %d updates, final mean reward %.4f",
                     n, result.train_steps, rows[-1]["mean_cumulative_reward"])
        meta = {"N": n, "seed": cfg.seed, "train_episodes": cfg.train_episodes,
                "history_size": cfg.history_size}
        paths.append(nn.save_checkpoint(net, checkpoint_path(out / "checkpoints", n), meta=meta))
        write_csv_atomic(out / f"reward_curve_N{n}.csv", rows_to_csv(rows, REWARD_FIELDS))
    return paths


# -- eval / compare ---------------------------------------------------------------


def load_dqn(cfg: ExperimentConfig, n_devices, checkpoint_dir):
    path = checkpoint_path(checkpoint_dir, n_devices)
    if not path.exists():
        raise CliError("missing_checkpoint", f"no checkpoint for N={n_devices} at {path}",
                       EXIT_CHECKPOINT, N=n_devices, path=str(path))
    try:
        net, meta = nn.load_checkpoint(path)
    except (ValueError, OSError, KeyError) as exc:
        raise CliError("bad_checkpoint", str(exc), EXIT_CHECKPOINT, path=str(path)) from None
    expected = (cfg.env_config(n_devices).state_dim, *cfg.hidden, dqn.N_ACTIONS)
    if tuple(net.sizes) != expected:
        raise CliError("architecture_mismatch",
                       f"checkpoint sizes {list(net.sizes)} != configured {list(expected)}",
                       EXIT_ARCHITECTURE, path=str(path))
    if meta.get("N", n_devices) != n_devices:
        raise CliError("architecture_mismatch", f"checkpoint was trained for N={meta['N']}",
                       EXIT_ARCHITECTURE, path=str(path))
    return net


def evaluate_policy(cfg: ExperimentConfig, policy, n_devices, checkpoint_dir, trace=False):
    """Per-episode metrics (and traces if requested) for one (policy, N)."""
    env_cfg = cfg.env_config(n_devices)
    if policy == "dqn":
        net = load_dqn(cfg, n_devices, checkpoint_dir)
        return dqn.evaluate(net, env_cfg, cfg.episodes, seed=cfg.seed,
                            exploration=cfg.schedule().final, trace=trace)
    pol = make_baseline(policy, sigma=cfg.sigma, p_min=cfg.p_min, p_max=cfg.p_max)
    return run_policy(env_cfg, pol, cfg.episodes, cfg.seed, trace=trace)


def _policy_rows(cfg, policy, checkpoint_dir, trace):
    rows = []
    for n in cfg.n_devices_list:
        res = evaluate_policy(cfg, policy, n, checkpoint_dir, trace)
        if trace:
            res, traces = res
            records = [dict(rec, episode=i) for i, tr in enumerate(traces) for rec in tr]
            tdir = Path(cfg.output_dir) / "traces"
            tdir.mkdir(parents=True, exist_ok=True)
            write_trace(tdir / f"{policy}_N{n}.jsonl", records,
                        header={"policy": policy, "N": n, "seed": cfg.seed, "episodes": cfg.episodes})
        horizon = cfg.env_config(n).horizon
        rows.extend(metrics_rows(res, f"{policy}-N{n}-s{cfg.seed}", policy, n,
                                 cfg.arrival_rate, cfg.seed, horizon))
    return rows


def _checkpoint_dir(cfg, checkpoint_dir):
    return Path(checkpoint_dir) if checkpoint_dir else Path(cfg.output_dir) / "checkpoints"


def run_eval(cfg: ExperimentConfig, checkpoint_dir=None, trace=False):
    _write_config(cfg)
    rows = _policy_rows(cfg, cfg.policy, _checkpoint_dir(cfg, checkpoint_dir), trace)
    return write_csv_atomic(Path(cfg.output_dir) / f"metrics_{cfg.policy}.csv", rows_to_csv(rows))


def plot_rows(rows, metric):
    """Aggregate per-episode CSV rows into one (N, policy) point per series."""
    column = PLOT_METRICS[metric]
    groups = {}
    for r in rows:
        groups.setdefault((int(r["N"]), r["policy"]), []).append(r[column])
    out = []
    for (n, policy), values in sorted(groups.items()):
        defined = [v for v in values if v is not None]
        mean, std = mean_std(defined)
        out.append({"N": n, "policy": policy, "mean": mean, "std": std, "episodes": len(defined)})
    return out


def run_compare(cfg: ExperimentConfig, checkpoint_dir=None, trace=False):
    ckpt = _checkpoint_dir(cfg, checkpoint_dir)
    # fail before any simulation if a dqn entry has nothing to load
    if "dqn" in cfg.compare_policies:
        for n in cfg.n_devices_list:
            load_dqn(cfg, n, ckpt)
    _write_config(cfg)
    rows = []
    for policy in cfg.compare_policies:
        rows.extend(_policy_rows(cfg, policy, ckpt, trace))
    out = Path(cfg.output_dir)
    paths = [write_csv_atomic(out / "compare.csv", rows_to_csv(rows, CSV_FIELDS))]
    for metric in PLOT_METRICS:
        paths.append(write_csv_atomic(out / f"plot_{metric}.csv",
                                      rows_to_csv(plot_rows(rows, metric), PLOT_FIELDS)))
    return paths


# -- entry point -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="mtcra", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("train", "train one shared DQN per N"),
                        ("eval", "evaluate the configured policy per N"),
                        ("compare", "evaluate all compare_policies with matched seeds")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--output-dir", help="override the config output_dir")
        p.add_argument("--trace", action="store_true", help="write JSON-lines slot traces")
        if name != "train":
            p.add_argument("--checkpoint-dir", help="default: <output_dir>/checkpoints")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", backend())
    try:
        try:
            cfg = ExperimentConfig.load(args.config)
            cfg = cfg.with_overrides(seed=args.seed, output_dir=args.output_dir)
        except ConfigError as exc:
            raise CliError("config", str(exc), EXIT_CONFIG, key=exc.key) from None
        except OSError as exc:
            raise CliError("config", f"cannot read config: {exc}", EXIT_CONFIG) from None
        if args.command == "train":
            paths = run_train(cfg)
        elif args.command == "eval":
            paths = [run_eval(cfg, args.checkpoint_dir, args.trace)]
        else:
            paths = run_compare(cfg, args.checkpoint_dir, args.trace)
    except CliError as exc:
        print(exc.line(), file=sys.stderr)
        return exc.code
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
