"""Flat key/value configuration: defaults, file parsing, presets.

Config files are plain text, one `key = value` per line, `#` comments.
Every key has exactly one home in the defaults table below; unknown keys
and malformed values are hard errors that name the offending key (a
present-but-broken key is never silently replaced by its default).
"""

from __future__ import annotations

import math
from pathlib import Path

from .reward import DEFAULT_EPSILON, RewardWeights
from .trainer import UPDATE_CADENCES, TrainConfig
from .world import ScenarioConfig


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_cadence(raw: str) -> str:
    val = raw.strip()
    if val not in UPDATE_CADENCES:
        raise ValueError(f"must be one of {UPDATE_CADENCES}")
    return val


# key -> (default, parser, help text with units)
DEFAULTS: dict[str, tuple] = {
    # scenario
    "n_vehicles":          (3,        int,   "number of cooperative vehicles"),
    "n_obstacles":         (1,        int,   "number of drifting obstacles"),
    "dt":                  (0.1,      float, "sampling period [s]"),
    "v_max":               (0.15,     float, "max vehicle linear velocity [m/s]"),
    "v_max_obstacle":      (0.1,      float, "obstacle drift speed [m/s]"),
    "omega_max":           (math.pi,  float, "max angular velocity [rad/s]"),
    "r_n":                 (0.15,     float, "neighbor graph threshold [m]"),
    "r_n_prime":           (0.1,      float, "min separation to neighbors [m]"),
    "r_o":                 (0.25,     float, "obstacle detection threshold [m]"),
    "r_o_prime":           (0.15,     float, "min separation to obstacles [m]"),
    "episode_length":      (50,       int,   "steps per episode"),
    "init_half_width":     (1.0,      float, "half-width of the init square [m]"),
    "waypoint_speed":      (0.1,      float, "waypoint homing speed [m/s]"),
    "obstacle_turn_std":   (0.3,      float, "obstacle heading noise std [rad]"),
    # reward
    "epsilon":             (DEFAULT_EPSILON, float, "waypoint distance normalizer [1/m]"),
    "beta":                (-0.1,     float, "action-effort weight (negative)"),
    "lambda":              (0.5,      float, "own vs neighbor reward mix in [0,1]"),
    # training
    "episodes":            (5000,     int,   "training episodes"),
    "warmup":              (1000,     int,   "buffer fill before updates start"),
    "batch_size":          (64,       int,   "minibatch length"),
    "buffer_capacity":     (100_000,  int,   "replay ring capacity"),
    "gamma":               (0.95,     float, "discount factor in [0,1)"),
    "tau":                 (0.01,     float, "target soft-update rate"),
    "learning_rate":       (1e-3,     float, "Adam step size for both networks"),
    "update_cadence":      ("per-step", _parse_cadence,
                            "learner updates per env step: per-step | per-vehicle"),
    "noise_start":         (0.3,      float, "initial exploration noise scale"),
    "noise_final":         (0.05,     float, "final exploration noise scale"),
    # observation encoding
    "grid_size":           (11,       int,   "anchors per axis (l)"),
    "goal_half_width":     (1.0,      float, "goal channel half-width [m]"),
    # bookkeeping
    "checkpoint_period":   (1000,     int,   "episodes between checkpoints"),
    "reward_curve_window": (1000,     int,   "episodes per reward-curve window"),
    "reward_log":          (False,    _parse_bool, "write per-step reward breakdown CSV"),
    "seed":                (0,        int,   "master seed"),
}

# Scenario presets named after the three reported scaling setups.
PRESETS: dict[str, dict] = {
    "table2-row1": {"n_vehicles": 3, "n_obstacles": 1},
    "table2-row2": {"n_vehicles": 5, "n_obstacles": 1},
    "table2-row3": {"n_vehicles": 5, "n_obstacles": 2},
}


def default_values() -> dict:
    return {key: spec[0] for key, spec in DEFAULTS.items()}


def parse_value(key: str, raw) -> object:
    """Parse one raw value for a known key; raises ConfigError naming the
    key for unknown keys and malformed values."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown configuration key: {key!r}")
    default, parser, _ = DEFAULTS[key]
    if isinstance(raw, str):
        try:
            return parser(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"malformed value for key {key!r}: {raw!r} ({exc})")
    if parser is int and isinstance(raw, bool):
        raise ConfigError(f"malformed value for key {key!r}: {raw!r}")
    if parser is int:
        if isinstance(raw, int):
            return raw
        raise ConfigError(f"malformed value for key {key!r}: {raw!r}")
    if parser is float and isinstance(raw, (int, float)):
        return float(raw)
    if parser is _parse_bool and isinstance(raw, bool):
        return raw
    if callable(parser):
        try:
            return parser(str(raw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"malformed value for key {key!r}: {raw!r} ({exc})")
    raise ConfigError(f"malformed value for key {key!r}: {raw!r}")


def parse_config_file(path) -> dict:
    """Read `key = value` lines into a validated dict (no defaults applied)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"configuration file not found: {p}")
    values: dict = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in values:
            raise ConfigError(f"{p}:{lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, raw)
    return values


def build_train_config(values: dict) -> TrainConfig:
    """Merge partial values over the defaults into a TrainConfig."""
    merged = default_values()
    for key, val in values.items():
        merged[key] = parse_value(key, val)
    scenario = ScenarioConfig(
        n_vehicles=merged["n_vehicles"],
        n_obstacles=merged["n_obstacles"],
        dt=merged["dt"],
        v_max=merged["v_max"],
        v_max_obstacle=merged["v_max_obstacle"],
        omega_max=merged["omega_max"],
        r_n=merged["r_n"],
        r_n_prime=merged["r_n_prime"],
        r_o=merged["r_o"],
        r_o_prime=merged["r_o_prime"],
        episode_length=merged["episode_length"],
        init_half_width=merged["init_half_width"],
        waypoint_speed=merged["waypoint_speed"],
        obstacle_turn_std=merged["obstacle_turn_std"],
        rng_seed=merged["seed"],
    )
    weights = RewardWeights(
        epsilon=merged["epsilon"], beta=merged["beta"], lam=merged["lambda"],
    )
    try:
        return TrainConfig(
            scenario=scenario,
            weights=weights,
            episodes=merged["episodes"],
            warmup=merged["warmup"],
            batch_size=merged["batch_size"],
            buffer_capacity=merged["buffer_capacity"],
            gamma=merged["gamma"],
            tau=merged["tau"],
            learning_rate=merged["learning_rate"],
            update_cadence=merged["update_cadence"],
            noise_start=merged["noise_start"],
            noise_final=merged["noise_final"],
            grid_size=merged["grid_size"],
            goal_half_width=merged["goal_half_width"],
            checkpoint_period=merged["checkpoint_period"],
            reward_curve_window=merged["reward_curve_window"],
            reward_log=merged["reward_log"],
            seed=merged["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def config_as_dict(cfg: TrainConfig) -> dict:
    """Flat key/value snapshot, the inverse of build_train_config."""
    s = cfg.scenario
    w = cfg.weights
    return {
        "n_vehicles": s.n_vehicles,
        "n_obstacles": s.n_obstacles,
        "dt": s.dt,
        "v_max": s.v_max,
        "v_max_obstacle": s.v_max_obstacle,
        "omega_max": s.omega_max,
        "r_n": s.r_n,
        "r_n_prime": s.r_n_prime,
        "r_o": s.r_o,
        "r_o_prime": s.r_o_prime,
        "episode_length": s.episode_length,
        "init_half_width": s.init_half_width,
        "waypoint_speed": s.waypoint_speed,
        "obstacle_turn_std": s.obstacle_turn_std,
        "epsilon": w.epsilon,
        "beta": w.beta,
        "lambda": w.lam,
        "episodes": cfg.episodes,
        "warmup": cfg.warmup,
        "batch_size": cfg.batch_size,
        "buffer_capacity": cfg.buffer_capacity,
        "gamma": cfg.gamma,
        "tau": cfg.tau,
        "learning_rate": cfg.learning_rate,
        "update_cadence": cfg.update_cadence,
        "noise_start": cfg.noise_start,
        "noise_final": cfg.noise_final,
        "grid_size": cfg.grid_size,
        "goal_half_width": cfg.goal_half_width,
        "checkpoint_period": cfg.checkpoint_period,
        "reward_curve_window": cfg.reward_curve_window,
        "reward_log": cfg.reward_log,
        "seed": cfg.seed,
    }


def write_config_file(path, values: dict) -> None:
    """Write a config dict in the same flat format, with unit comments."""
    lines = ["# flockrl run configuration"]
    for key, spec in DEFAULTS.items():
        if key in values:
            lines.append(f"{key} = {values[key]}  # {spec[2]}")
    Path(path).write_text("\n".join(lines) + "\n")
