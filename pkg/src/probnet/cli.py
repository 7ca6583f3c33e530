"""Command line: run experiments from declarative configs, verify their
artifacts, and inspect network snapshots.

    probnet run <config.json>       execute and write CSV/SVG artifacts
    probnet verify <config.json>    check artifacts against thresholds
    probnet show <snapshot.json>    summarize a saved network

The output directory comes from the config, or from $PROBNET_OUTDIR when
set.  Exit codes: 0 success / all checks pass, 1 failed checks or runtime
error, 2 invalid config, 3 runtime cap exceeded, 4 missing artifacts.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import Counter
from pathlib import Path

from . import netcore
from .experiments import (ConfigError, MissingArtifacts, RuntimeCapExceeded,
                          load_config, run_experiment, verify_experiment)

OUTDIR_ENV = "PROBNET_OUTDIR"


def _outdir(cfg, config_path: Path) -> Path:
    override = os.environ.get(OUTDIR_ENV)
    if override:
        return Path(override)
    out = Path(cfg.output_dir)
    return out if out.is_absolute() else config_path.parent / out


def cmd_run(args) -> int:
    config_path = Path(args.config)
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    outdir = _outdir(cfg, config_path)
    try:
        artifacts = run_experiment(cfg, outdir)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except RuntimeCapExceeded as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 3
    for name in artifacts:
        print(f"wrote {outdir / name}")
    return 0


def cmd_verify(args) -> int:
    config_path = Path(args.config)
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    outdir = _outdir(cfg, config_path)
    try:
        checks = verify_experiment(cfg, outdir)
    except MissingArtifacts as exc:
        print(f"error: artifacts: {exc}", file=sys.stderr)
        return 4
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<{width}}  {c.detail}")
    return 0 if all(c.passed for c in checks) else 1


def cmd_show(args) -> int:
    try:
        net = netcore.load(args.snapshot)
    except (OSError, netcore.SnapshotError) as exc:
        print(f"error: snapshot: {exc}", file=sys.stderr)
        return 1
    kinds = Counter(u.kind for u in net.units)
    frozen = sum(1 for c in net.connections if c.frozen)
    print(f"format_version: {netcore.FORMAT_VERSION}")
    print(f"rng_seed: {net.rng_seed}")
    print(f"units: {len(net.units)} "
          f"(input {kinds.get('input', 0)}, bias {kinds.get('bias', 0)}, "
          f"hidden {kinds.get('hidden', 0)}, output {kinds.get('output', 0)})")
    layers = Counter(u.layer for u in net.units if u.kind == "hidden")
    if layers:
        per_layer = ", ".join(f"layer {k}: {v}" for k, v in sorted(layers.items()))
        print(f"hidden layers: {per_layer}")
    print(f"connections: {len(net.connections)} ({frozen} frozen)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="probnet",
        description="reinforcement-driven probability learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="check a completed run's artifacts")
    p_verify.add_argument("config")
    p_verify.set_defaults(func=cmd_verify)

    p_show = sub.add_parser("show", help="summarize a network snapshot")
    p_show.add_argument("snapshot")
    p_show.set_defaults(func=cmd_show)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
