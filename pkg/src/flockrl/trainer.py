"""Training and evaluation loops.

One environment step: every vehicle encodes its observation from the frozen
current state and picks a noisy action; the world then advances all vehicles
simultaneously; rewards are computed on the reached state; all transitions
go into the shared buffer; finally the learner performs its update(s) for
this step. The master seed splits into independent streams for episode
initialization, the obstacle walk, exploration noise, and replay sampling,
so the whole run is exactly reproducible.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import ddpg
from .ddpg import LearnerState, act, critic_update, actor_update, soft_update
from .observation import ObservationGrids, encode_observation
from .replay import ReplayBuffer, Transition
from .reward import REWARD_LOG_HEADER, RewardWeights, compute_step_rewards
from .world import (
    ScenarioConfig, TRAJECTORY_HEADER, WorldState, build_proximity_sets,
    reset_episode, step_world, trajectory_rows,
)

UPDATE_CADENCES = ("per-step", "per-vehicle")

METRICS_HEADER = (
    "episode", "return_mean", "return_min", "return_max", "tracking_error",
    "min_sep_obstacle", "min_sep_neighbor", "mean_sep_neighbor",
    "critic_loss_mean",
)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on, in one place."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    episodes: int = 5000
    warmup: int = 1000
    batch_size: int = 64
    buffer_capacity: int = 100_000
    gamma: float = 0.95
    tau: float = 0.01
    learning_rate: float = 1e-3
    update_cadence: str = "per-step"
    noise_start: float = 0.3
    noise_final: float = 0.05
    grid_size: int = 11
    goal_half_width: float = 1.0
    checkpoint_period: int = 1000
    reward_curve_window: int = 1000
    reward_log: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ValueError(f"episodes must be >= 1, got {self.episodes}")
        if self.warmup > self.buffer_capacity:
            raise ValueError(
                f"warmup ({self.warmup}) must not exceed buffer capacity "
                f"({self.buffer_capacity})"
            )
        if self.update_cadence not in UPDATE_CADENCES:
            raise ValueError(
                f"update_cadence must be one of {UPDATE_CADENCES}, "
                f"got {self.update_cadence!r}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")

    def obs_shape(self) -> tuple[int, int, int]:
        return (3, self.grid_size, self.grid_size)


@dataclass
class EpisodeRecord:
    episode: int
    returns: np.ndarray              # (n,) undiscounted per-vehicle return
    returns_discounted: np.ndarray   # (n,) with the configured gamma
    breakdowns: np.ndarray           # (T, n, 6): conn, obst, way, effort, total, incl
    tracking_trace: np.ndarray       # (T,) mean over vehicles per step
    tracking_error: float
    min_sep_neighbor: float
    min_sep_obstacle: float
    mean_sep_neighbor: float
    critic_loss_mean: float
    noise_scale: float
    wall_time_ms: float


@dataclass(frozen=True)
class EvalSummary:
    episodes: int
    seed: int
    mean_tracking_error: float
    min_separation_obstacle: float
    min_separation_neighbor: float
    mean_separation_neighbor: float
    collision_step_fraction: float

    def as_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or reward turns non-finite; carries a diagnostic
    record of where the run died."""

    def __init__(self, episode: int, step: int, reason: str):
        super().__init__(
            f"training diverged at episode {episode}, step {step}: {reason}"
        )
        self.diagnostic = {"episode": episode, "step": step, "reason": reason}


def compute_return(rewards, gamma: float) -> float:
    """Discounted sum of a finite reward sequence."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    total = 0.0
    g = 1.0
    for r in rewards:
        total += g * float(r)
        g *= gamma
    return total


def noise_schedule(episode: int, cfg: TrainConfig) -> float:
    """Linear decay from noise_start to noise_final over the first half of
    training, then flat."""
    half = max(1, cfg.episodes // 2)
    frac = min(1.0, episode / half)
    return cfg.noise_start + (cfg.noise_final - cfg.noise_start) * frac


def _fmt(x: float) -> str:
    return repr(float(x))


class _RunWriter:
    """Streams run artifacts (metrics, timing, optional per-step rewards,
    checkpoints) into a run directory."""

    def __init__(self, out_dir, cfg: TrainConfig):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "checkpoints").mkdir(exist_ok=True)
        self.cfg = cfg
        self._metrics = open(self.dir / "metrics.csv", "w", newline="")
        self._metrics_csv = csv.writer(self._metrics)
        self._metrics_csv.writerow(METRICS_HEADER)
        self._timing = open(self.dir / "timing.csv", "w", newline="")
        self._timing_csv = csv.writer(self._timing)
        self._timing_csv.writerow(("episode", "wall_time_ms"))
        self._rewards = None
        if cfg.reward_log:
            self._rewards = open(self.dir / "rewards.csv", "w", newline="")
            self._rewards_csv = csv.writer(self._rewards)
            self._rewards_csv.writerow(REWARD_LOG_HEADER)

    def write_episode(self, rec: EpisodeRecord) -> None:
        self._metrics_csv.writerow((
            rec.episode,
            _fmt(rec.returns.mean()), _fmt(rec.returns.min()), _fmt(rec.returns.max()),
            _fmt(rec.tracking_error),
            _fmt(rec.min_sep_obstacle), _fmt(rec.min_sep_neighbor),
            _fmt(rec.mean_sep_neighbor), _fmt(rec.critic_loss_mean),
        ))
        self._timing_csv.writerow((rec.episode, _fmt(rec.wall_time_ms)))
        if self._rewards is not None:
            t_steps, n, _ = rec.breakdowns.shape
            for k in range(t_steps):
                for i in range(n):
                    row = rec.breakdowns[k, i]
                    self._rewards_csv.writerow(
                        (rec.episode, k, i) + tuple(_fmt(v) for v in row))

    def checkpoint_path(self, episode: int | None) -> Path:
        if episode is None:
            return self.dir / "checkpoints" / "checkpoint_final.bin"
        return self.dir / "checkpoints" / f"checkpoint_ep{episode:06d}.bin"

    def write_reward_curve(self, records: list[EpisodeRecord]) -> None:
        window = self.cfg.reward_curve_window
        with open(self.dir / "reward_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("window", "first_episode", "last_episode", "mean_return"))
            for widx, lo in enumerate(range(0, len(records), window)):
                chunk = records[lo:lo + window]
                mean_ret = float(np.mean([r.returns.mean() for r in chunk]))
                w.writerow((widx, chunk[0].episode, chunk[-1].episode, _fmt(mean_ret)))

    def write_diagnostic(self, diagnostic: dict) -> None:
        import json
        (self.dir / "diverged.json").write_text(
            json.dumps(diagnostic, sort_keys=True, indent=2))

    def close(self) -> None:
        self._metrics.close()
        self._timing.close()
        if self._rewards is not None:
            self._rewards.close()


def _pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def _checkpoint_meta(cfg: TrainConfig, episode: int) -> dict:
    from .config import config_as_dict
    return {"config": config_as_dict(cfg), "episode": episode}


def run_training(
    cfg: TrainConfig, out_dir=None
) -> tuple[LearnerState, list[EpisodeRecord]]:
    """Full training run; returns the final learner and one record per
    episode. When out_dir is given, metrics/timing/reward-curve CSVs and
    periodic plus final checkpoints are written there."""
    scen = cfg.scenario
    n = scen.n_vehicles
    t_steps = scen.episode_length

    seed_seq = np.random.SeedSequence(cfg.seed)
    ss_weights, ss_init, ss_walk, ss_noise, ss_replay = seed_seq.spawn(5)
    rng_weights = np.random.default_rng(ss_weights)
    rng_init = np.random.default_rng(ss_init)
    rng_walk = np.random.default_rng(ss_walk)
    rng_noise = np.random.default_rng(ss_noise)
    rng_replay = np.random.default_rng(ss_replay)

    grids = ObservationGrids.from_config(scen, cfg.grid_size, cfg.goal_half_width)
    learner = ddpg.init_learner(
        cfg.obs_shape(), scen.v_max, scen.omega_max, rng_weights,
        gamma=cfg.gamma, tau=cfg.tau, learning_rate=cfg.learning_rate,
    )
    buffer = ReplayBuffer(cfg.buffer_capacity)
    min_fill = max(cfg.warmup, cfg.batch_size)
    updates_per_step = n if cfg.update_cadence == "per-vehicle" else 1
    iu, ju = _pair_indices(n)

    writer = _RunWriter(out_dir, cfg) if out_dir is not None else None
    records: list[EpisodeRecord] = []
    # The networks are small: multithreaded BLAS loses to its own sync
    # overhead here, so runs are pinned to one thread.
    limiter = threadpool_limits(limits=1)
    try:
        for ep in range(cfg.episodes):
            t0 = time.perf_counter()
            noise = noise_schedule(ep, cfg)
            state = reset_episode(scen, rng_init)
            sets = build_proximity_sets(state, scen)
            obs = [encode_observation(i, state, sets, grids) for i in range(n)]

            breakdowns = np.zeros((t_steps, n, 6))
            tracking = np.zeros(t_steps)
            min_nb = math.inf
            min_ob = math.inf
            nb_sum = 0.0
            nb_count = 0
            losses: list[float] = []

            for k in range(t_steps):
                actions = [act(obs[i], learner, noise, rng_noise) for i in range(n)]
                state2 = step_world(state, actions, scen, rng_walk)
                sets2 = build_proximity_sets(state2, scen)
                bds = compute_step_rewards(state2, sets2, actions, cfg.weights, scen)
                for i, b in enumerate(bds):
                    breakdowns[k, i] = (b.connectivity, b.obstacle, b.waypoint,
                                        b.effort, b.total, b.inclusive)
                if not np.isfinite(breakdowns[k]).all():
                    raise TrainingDiverged(ep, k, "non-finite reward")

                obs2 = [encode_observation(i, state2, sets2, grids) for i in range(n)]
                for i in range(n):
                    buffer.push(Transition(
                        observation=obs[i].stacked,
                        action=actions[i].as_array(),
                        reward=bds[i].inclusive,
                        next_observation=obs2[i].stacked,
                    ))

                if buffer.size >= min_fill:
                    for _ in range(updates_per_step):
                        batch = buffer.sample(cfg.batch_size, rng_replay)
                        learner, loss = critic_update(batch, learner)
                        if not math.isfinite(loss):
                            raise TrainingDiverged(ep, k, f"critic loss {loss}")
                        learner = actor_update(batch, learner)
                        learner = soft_update(learner)
                        losses.append(loss)

                pos = state2.vehicle_positions()
                tracking[k] = float(
                    np.mean(np.linalg.norm(pos - state2.waypoint, axis=1)))
                if n > 1:
                    d = sets2.vehicle_distances[iu, ju]
                    min_nb = min(min_nb, float(d.min()))
                    nb_sum += float(d.sum())
                    nb_count += d.size
                if sets2.obstacle_distances.size:
                    min_ob = min(min_ob, float(sets2.obstacle_distances.min()))

                state, sets, obs = state2, sets2, obs2

            totals = breakdowns[:, :, 4]
            rec = EpisodeRecord(
                episode=ep,
                returns=totals.sum(axis=0),
                returns_discounted=np.array(
                    [compute_return(totals[:, i], cfg.gamma) for i in range(n)]),
                breakdowns=breakdowns,
                tracking_trace=tracking,
                tracking_error=float(tracking.mean()),
                min_sep_neighbor=min_nb,
                min_sep_obstacle=min_ob,
                mean_sep_neighbor=(nb_sum / nb_count) if nb_count else math.nan,
                critic_loss_mean=float(np.mean(losses)) if losses else math.nan,
                noise_scale=noise,
                wall_time_ms=(time.perf_counter() - t0) * 1e3,
            )
            records.append(rec)
            if writer is not None:
                writer.write_episode(rec)
                if cfg.checkpoint_period and (ep + 1) % cfg.checkpoint_period == 0:
                    ddpg.save_learner(writer.checkpoint_path(ep + 1), learner,
                                      _checkpoint_meta(cfg, ep + 1))
    except TrainingDiverged as exc:
        if writer is not None:
            writer.write_diagnostic(exc.diagnostic)
        raise
    finally:
        limiter.unregister()
        if writer is not None:
            writer.write_reward_curve(records)
            writer.close()
    if writer is not None:
        ddpg.save_learner(writer.checkpoint_path(None), learner,
                          _checkpoint_meta(cfg, cfg.episodes))
    return learner, records


def run_evaluation(
    learner: LearnerState,
    cfg: TrainConfig,
    episodes: int,
    seed: int = 0,
    trajectory_path=None,
) -> EvalSummary:
    """Noise-free rollouts of the current policy: no learning, no buffer
    writes, learner untouched. Environment randomness is derived from
    (seed, episode) only, so different policies evaluated with the same
    seed see identical initial states and obstacle walks."""
    scen = cfg.scenario
    n = scen.n_vehicles
    grids = ObservationGrids.from_config(scen, cfg.grid_size, cfg.goal_half_width)
    iu, ju = _pair_indices(n)

    tracking_sum = 0.0
    tracking_count = 0
    min_nb = math.inf
    min_ob = math.inf
    nb_sum = 0.0
    nb_count = 0
    violating_steps = 0
    total_steps = 0

    traj_fh = None
    traj_csv = None
    if trajectory_path is not None:
        traj_fh = open(trajectory_path, "w", newline="")
        traj_csv = csv.writer(traj_fh)
        traj_csv.writerow(TRAJECTORY_HEADER)
    limiter = threadpool_limits(limits=1)

    def _write_traj(state: WorldState, ep: int) -> None:
        if traj_csv is not None:
            for row in trajectory_rows(state, ep):
                traj_csv.writerow(row[:4] + tuple(_fmt(v) for v in row[4:]))

    try:
        for ep in range(episodes):
            ep_seq = np.random.SeedSequence([seed, ep])
            ss_init, ss_walk = ep_seq.spawn(2)
            rng_init = np.random.default_rng(ss_init)
            rng_walk = np.random.default_rng(ss_walk)

            state = reset_episode(scen, rng_init)
            sets = build_proximity_sets(state, scen)
            _write_traj(state, ep)
            for _ in range(scen.episode_length):
                obs = [encode_observation(i, state, sets, grids) for i in range(n)]
                actions = [act(obs[i], learner, 0.0) for i in range(n)]
                state = step_world(state, actions, scen, rng_walk)
                sets = build_proximity_sets(state, scen)
                _write_traj(state, ep)

                pos = state.vehicle_positions()
                dists = np.linalg.norm(pos - state.waypoint, axis=1)
                tracking_sum += float(dists.sum())
                tracking_count += n
                violated = False
                if n > 1:
                    d = sets.vehicle_distances[iu, ju]
                    dmin = float(d.min())
                    min_nb = min(min_nb, dmin)
                    nb_sum += float(d.sum())
                    nb_count += d.size
                    violated = violated or dmin < scen.r_n_prime
                if sets.obstacle_distances.size:
                    omin = float(sets.obstacle_distances.min())
                    min_ob = min(min_ob, omin)
                    violated = violated or omin < scen.r_o_prime
                violating_steps += int(violated)
                total_steps += 1
    finally:
        limiter.unregister()
        if traj_fh is not None:
            traj_fh.close()

    return EvalSummary(
        episodes=episodes,
        seed=seed,
        mean_tracking_error=tracking_sum / tracking_count,
        min_separation_obstacle=min_ob,
        min_separation_neighbor=min_nb,
        mean_separation_neighbor=(nb_sum / nb_count) if nb_count else math.nan,
        collision_step_fraction=violating_steps / total_steps,
    )
