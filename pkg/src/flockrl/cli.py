"""Command-line entry point: train, evaluate, scaling-report,
export-trajectory.

Every training run gets its own directory under the output root (flag
--out-dir, or the FLOCKRL_OUT_ROOT environment variable, or ./runs) with a
manifest recording the full config snapshot, seed, and code version —
enough to reproduce the run exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, ddpg
from .checkpoint import CheckpointFormatError
from .config import (
    ConfigError, PRESETS, build_train_config, config_as_dict, parse_config_file,
    parse_value,
)
from .trainer import run_evaluation, run_training

OUT_ROOT_ENV = "FLOCKRL_OUT_ROOT"

SCALING_HEADER = (
    "vehicles", "obstacles", "mean_ms_per_episode", "tracking_error",
    "min_sep_obstacle", "min_sep_neighbor", "mean_sep_neighbor",
)


def _fmt(x: float) -> str:
    return repr(float(x))


def _gather_values(args) -> dict:
    """Config file, then preset, then command-line overrides."""
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[args.preset])
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        values[key] = parse_value(key, raw)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        values["episodes"] = args.episodes
    return values


def _resolve_out_dir(args, seed: int) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return root / f"run-{stamp}-seed{seed}"


def _write_manifest(out_dir: Path, cfg_dict: dict, seed: int,
                    started_at: str, finished_at: str | None) -> None:
    manifest = {
        "config": cfg_dict,
        "code_version": __version__,
        "seed": seed,
        "out_dir": str(out_dir),
        "started_at": started_at,
        "finished_at": finished_at,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def cmd_train(args) -> int:
    values = _gather_values(args)
    cfg = build_train_config(values)
    out_dir = _resolve_out_dir(args, cfg.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_dict = config_as_dict(cfg)
    started_at = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write_manifest(out_dir, cfg_dict, cfg.seed, started_at, finished_at=None)
    print(f"training: {cfg.scenario.n_vehicles} vehicles, "
          f"{cfg.scenario.n_obstacles} obstacles, {cfg.episodes} episodes "
          f"-> {out_dir}")
    learner, records = run_training(cfg, out_dir=out_dir)
    _write_manifest(out_dir, cfg_dict, cfg.seed, started_at,
                    finished_at=time.strftime("%Y-%m-%dT%H:%M:%S"))
    mean_last = float(np.mean([r.returns.mean() for r in records[-100:]]))
    print(f"done: {len(records)} episodes, "
          f"mean return over last {min(100, len(records))}: {mean_last:.3f}")
    print(f"final checkpoint: {out_dir / 'checkpoints' / 'checkpoint_final.bin'}")
    return 0


def _load_checkpoint_config(args):
    learner, extra = ddpg.load_learner(args.checkpoint)
    values = dict(extra.get("config", {}))
    if args.config:
        values.update(parse_config_file(args.config))
    if not values:
        raise ConfigError(
            f"checkpoint {args.checkpoint} carries no config snapshot and no "
            f"--config was given")
    cfg = build_train_config(values)
    return learner, cfg


def cmd_evaluate(args) -> int:
    learner, cfg = _load_checkpoint_config(args)
    seed = args.seed if args.seed is not None else 0
    episodes = args.episodes if args.episodes is not None else 1000
    summary = run_evaluation(learner, cfg, episodes=episodes, seed=seed)
    print(f"evaluation of {args.checkpoint} over {episodes} episodes "
          f"(seed {seed}):")
    print(f"  waypoint tracking error:            {summary.mean_tracking_error}")
    print(f"  min separation to obstacles:        {summary.min_separation_obstacle}")
    print(f"  min separation to neighbors:        {summary.min_separation_neighbor}")
    print(f"  mean separation to neighbors:       {summary.mean_separation_neighbor}")
    print(f"  collision-step fraction:            {summary.collision_step_fraction}")
    payload = summary.as_dict()
    payload["checkpoint"] = str(args.checkpoint)
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"summary written to {args.out}")
    else:
        run_dir = Path(args.checkpoint).resolve().parent.parent
        if (run_dir / "manifest.json").is_file():
            (run_dir / "eval_summary.json").write_text(text)
            print(f"summary written to {run_dir / 'eval_summary.json'}")
    return 0


def _mean_ms_per_episode(run_dir: Path) -> float:
    times = []
    with open(run_dir / "timing.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["wall_time_ms"]))
    if not times:
        raise ConfigError(f"{run_dir}/timing.csv has no rows")
    return sum(times) / len(times)


def cmd_scaling_report(args) -> int:
    rows = []
    for run_dir in map(Path, args.run_dir):
        manifest_path = run_dir / "manifest.json"
        if not manifest_path.is_file():
            raise ConfigError(f"no manifest.json in {run_dir}")
        manifest = json.loads(manifest_path.read_text())
        cfg_dict = manifest["config"]
        summary_path = run_dir / "eval_summary.json"
        if not summary_path.is_file():
            raise ConfigError(
                f"no eval_summary.json in {run_dir}; run "
                f"'flockrl evaluate --checkpoint "
                f"{run_dir / 'checkpoints' / 'checkpoint_final.bin'}' first")
        summary = json.loads(summary_path.read_text())
        rows.append((
            cfg_dict["n_vehicles"], cfg_dict["n_obstacles"],
            _mean_ms_per_episode(run_dir),
            summary["mean_tracking_error"],
            summary["min_separation_obstacle"],
            summary["min_separation_neighbor"],
            summary["mean_separation_neighbor"],
        ))
    header = "  ".join(f"{h:>20s}" for h in SCALING_HEADER)
    print(header)
    for row in rows:
        print("  ".join(f"{str(v):>20s}" for v in row))
    out_path = Path(args.out) if args.out else Path("scaling_report.csv")
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCALING_HEADER)
        for row in rows:
            w.writerow(row[:2] + tuple(_fmt(v) for v in row[2:]))
    print(f"report written to {out_path}")
    return 0


def cmd_export_trajectory(args) -> int:
    learner, cfg = _load_checkpoint_config(args)
    seed = args.seed if args.seed is not None else 0
    episodes = args.episodes if args.episodes is not None else 1
    out = Path(args.out) if args.out else Path("trajectories.csv")
    run_evaluation(learner, cfg, episodes=episodes, seed=seed,
                   trajectory_path=out)
    print(f"exported {episodes} episode(s) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flockrl",
        description="Multi-vehicle flocking control trained with a "
                    "deterministic actor-critic.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a training experiment")
    train.add_argument("--config", help="flat key/value config file")
    train.add_argument("--preset", choices=sorted(PRESETS),
                       help="scenario preset")
    train.add_argument("--seed", type=int, help="master seed override")
    train.add_argument("--episodes", type=int, help="episode count override")
    train.add_argument("--out-dir", help="run directory (default under "
                       f"${OUT_ROOT_ENV} or ./runs)")
    train.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint, noise-free")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, help="evaluation episodes (default 1000)")
    ev.add_argument("--seed", type=int, help="evaluation seed (default 0)")
    ev.add_argument("--config", help="override the embedded config snapshot")
    ev.add_argument("--out", help="summary JSON path")
    ev.set_defaults(func=cmd_evaluate)

    sc = sub.add_parser("scaling-report",
                        help="tabulate timing and metrics across trained runs")
    sc.add_argument("--run-dir", action="append", required=True,
                    help="trained run directory (repeat for each scenario)")
    sc.add_argument("--out", help="report CSV path")
    sc.set_defaults(func=cmd_scaling_report)

    ex = sub.add_parser("export-trajectory",
                        help="roll out a checkpoint and export paths as CSV")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--episodes", type=int, help="episodes to export (default 1)")
    ex.add_argument("--seed", type=int, help="evaluation seed (default 0)")
    ex.add_argument("--config", help="override the embedded config snapshot")
    ex.add_argument("--out", help="trajectory CSV path")
    ex.set_defaults(func=cmd_export_trajectory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
