"""Planar multi-vehicle world: unicycle kinematics, drifting obstacles,
a waypoint homing on the origin, and per-step proximity graphs.

Everything here is a pure function of (state, inputs, rng); the rng is always
passed explicitly so trajectories are exactly reproducible from a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    w = math.remainder(theta, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


@dataclass(frozen=True)
class VehiclePose:
    """Planar pose; heading is kept wrapped to (-pi, pi]."""

    x: float
    y: float
    heading: float

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ControlInput:
    """(linear velocity, angular velocity) command for one vehicle."""

    linear_velocity: float
    angular_velocity: float

    def as_array(self) -> np.ndarray:
        return np.array([self.linear_velocity, self.angular_velocity])


@dataclass(frozen=True)
class ScenarioConfig:
    """All scenario constants for one run.

    Distances are metres, angles radians, velocities per second.
    """

    n_vehicles: int = 3
    n_obstacles: int = 1
    dt: float = 0.1
    v_max: float = 0.15
    v_max_obstacle: float = 0.1
    omega_max: float = math.pi
    r_n: float = 0.15          # neighbor graph threshold
    r_n_prime: float = 0.1     # minimum separation to neighbors
    r_o: float = 0.25          # obstacle detection threshold
    r_o_prime: float = 0.15    # minimum separation to obstacles
    episode_length: int = 50
    init_half_width: float = 1.0
    waypoint_speed: float = 0.1
    obstacle_turn_std: float = 0.3
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.r_n_prime < self.r_n:
            raise ValueError(f"r_n_prime ({self.r_n_prime}) must be < r_n ({self.r_n})")
        if not self.r_o_prime < self.r_o:
            raise ValueError(f"r_o_prime ({self.r_o_prime}) must be < r_o ({self.r_o})")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.episode_length < 1:
            raise ValueError(f"episode_length must be >= 1, got {self.episode_length}")
        if self.n_vehicles < 1:
            raise ValueError(f"n_vehicles must be >= 1, got {self.n_vehicles}")
        if self.n_obstacles < 0:
            raise ValueError(f"n_obstacles must be >= 0, got {self.n_obstacles}")


@dataclass
class WorldState:
    """Single source of truth for one simulation step.

    `obstacle_headings` carries the persistent direction of each obstacle's
    drift between steps; it is part of the obstacle random-walk state.
    """

    vehicles: list[VehiclePose]
    obstacles: np.ndarray           # (n_obstacles, 2)
    obstacle_headings: np.ndarray   # (n_obstacles,)
    waypoint: np.ndarray            # (2,)
    step: int = 0

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    def vehicle_positions(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.vehicles])


@dataclass
class ProximitySets:
    """Neighbor and obstacle index sets per vehicle, plus the distance
    matrices they were derived from (kept to avoid recomputing them for
    rewards and metrics)."""

    neighbor_sets: tuple[tuple[int, ...], ...]
    obstacle_sets: tuple[tuple[int, ...], ...]
    vehicle_distances: np.ndarray   # (n, n), zero diagonal
    obstacle_distances: np.ndarray  # (n, n_obstacles)


def step_vehicle(pose: VehiclePose, u: ControlInput, dt: float) -> VehiclePose:
    """Advance one vehicle by one sampling period.

    Translation uses the pre-update heading; the heading is integrated
    afterwards and wrapped.
    """
    vals = (pose.x, pose.y, pose.heading, u.linear_velocity, u.angular_velocity, dt)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite vehicle step input: pose={pose}, u={u}, dt={dt}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    step_len = u.linear_velocity * dt
    return VehiclePose(
        x=pose.x + step_len * math.cos(pose.heading),
        y=pose.y + step_len * math.sin(pose.heading),
        heading=wrap_angle(pose.heading + u.angular_velocity * dt),
    )


def build_proximity_sets(state: WorldState, cfg: ScenarioConfig) -> ProximitySets:
    """Strict-threshold proximity graphs: (i, j) is an edge iff their
    distance is strictly below r_n, (i, o) iff strictly below r_o."""
    pos = state.vehicle_positions()
    n = len(pos)
    diff = pos[:, None, :] - pos[None, :, :]
    vdist = np.sqrt((diff * diff).sum(axis=-1))
    neighbor_sets = tuple(
        tuple(j for j in range(n) if j != i and vdist[i, j] < cfg.r_n)
        for i in range(n)
    )
    if state.obstacles.size:
        odiff = pos[:, None, :] - state.obstacles[None, :, :]
        odist = np.sqrt((odiff * odiff).sum(axis=-1))
        obstacle_sets = tuple(
            tuple(o for o in range(odist.shape[1]) if odist[i, o] < cfg.r_o)
            for i in range(n)
        )
    else:
        odist = np.zeros((n, 0))
        obstacle_sets = tuple(() for _ in range(n))
    return ProximitySets(neighbor_sets, obstacle_sets, vdist, odist)


def step_world(
    state: WorldState,
    actions: list[ControlInput],
    cfg: ScenarioConfig,
    rng: np.random.Generator,
) -> WorldState:
    """Advance the whole world by one step.

    Vehicles move per their actions; each obstacle drifts at fixed speed
    with its heading perturbed by Gaussian noise; the waypoint moves at
    constant speed toward the origin and freezes once it arrives.
    """
    if len(actions) != len(state.vehicles):
        raise ValueError(
            f"expected {len(state.vehicles)} actions, got {len(actions)}"
        )
    vehicles = [step_vehicle(p, u, cfg.dt) for p, u in zip(state.vehicles, actions)]

    m = state.obstacles.shape[0]
    if m:
        headings = state.obstacle_headings
        unit = np.stack([np.cos(headings), np.sin(headings)], axis=1)
        obstacles = state.obstacles + cfg.v_max_obstacle * cfg.dt * unit
        turns = rng.normal(0.0, cfg.obstacle_turn_std, size=m)
        new_headings = np.array(
            [wrap_angle(h + t) for h, t in zip(headings, turns)]
        )
    else:
        obstacles = state.obstacles.copy()
        new_headings = state.obstacle_headings.copy()

    waypoint = state.waypoint.copy()
    dist = float(np.linalg.norm(waypoint))
    if dist > 0.0:
        travel = min(cfg.waypoint_speed * cfg.dt, dist)
        waypoint = waypoint - (waypoint / dist) * travel

    return WorldState(
        vehicles=vehicles,
        obstacles=obstacles,
        obstacle_headings=new_headings,
        waypoint=waypoint,
        step=state.step + 1,
    )


def reset_episode(cfg: ScenarioConfig, rng: np.random.Generator) -> WorldState:
    """Draw a fresh initial state: vehicles, obstacles, and waypoint
    uniform on the init square, headings uniform on (-pi, pi]."""
    w = cfg.init_half_width
    vpos = rng.uniform(-w, w, size=(cfg.n_vehicles, 2))
    vheads = math.pi - rng.uniform(0.0, TWO_PI, size=cfg.n_vehicles)
    vehicles = [
        VehiclePose(float(p[0]), float(p[1]), float(h))
        for p, h in zip(vpos, vheads)
    ]
    obstacles = rng.uniform(-w, w, size=(cfg.n_obstacles, 2))
    obstacle_headings = math.pi - rng.uniform(0.0, TWO_PI, size=cfg.n_obstacles)
    waypoint = rng.uniform(-w, w, size=2)
    return WorldState(
        vehicles=vehicles,
        obstacles=obstacles,
        obstacle_headings=np.asarray(obstacle_headings, dtype=float),
        waypoint=waypoint,
        step=0,
    )


TRAJECTORY_HEADER = ("episode", "step", "entity_type", "entity_id", "x", "y", "heading")


def trajectory_rows(state: WorldState, episode: int) -> list[tuple]:
    """Flatten one world state into trajectory-CSV rows."""
    rows: list[tuple] = []
    for i, p in enumerate(state.vehicles):
        rows.append((episode, state.step, "vehicle", i, p.x, p.y, p.heading))
    for o in range(state.obstacles.shape[0]):
        rows.append(
            (episode, state.step, "obstacle", o,
             float(state.obstacles[o, 0]), float(state.obstacles[o, 1]),
             float(state.obstacle_headings[o]))
        )
    rows.append(
        (episode, state.step, "waypoint", 0,
         float(state.waypoint[0]), float(state.waypoint[1]), 0.0)
    )
    return rows
