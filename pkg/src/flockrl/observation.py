"""Fixed-size anchor-grid encoding of each vehicle's local view.

A vehicle's variable-cardinality surroundings (neighbors, obstacles, the
waypoint) are projected into three l-by-l channels. Each channel lays an
l x l lattice of anchors over a square region of the body frame; every
anchor accumulates a Gaussian radial intensity from each source point, so
the encoding size never depends on how many sources are visible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .world import ProximitySets, ScenarioConfig, VehiclePose, WorldState


@dataclass(frozen=True)
class AnchorGrid:
    """An l x l lattice of anchor points on [-half_width, half_width]^2.

    anchor_positions[i, j] is the body-frame location of anchor (i, j),
    with axis 0 indexing body-x and axis 1 indexing body-y. sigma_inverse
    is the (symmetric positive definite) sensitivity matrix of the radial
    response.
    """

    l: int
    half_width: float
    anchor_positions: np.ndarray   # (l, l, 2)
    sigma_inverse: np.ndarray      # (2, 2)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.l - 1)

    @classmethod
    def build(cls, l: int, half_width: float, sigma: float | None = None) -> "AnchorGrid":
        """Anchors are placed inclusively, corner to corner. By default the
        radial width sigma equals one anchor spacing so each source excites
        a small patch of the grid."""
        if l < 2:
            raise ValueError(f"grid side length must be >= 2, got {l}")
        if half_width <= 0:
            raise ValueError(f"half_width must be positive, got {half_width}")
        ticks = np.linspace(-half_width, half_width, l)
        xs, ys = np.meshgrid(ticks, ticks, indexing="ij")
        positions = np.stack([xs, ys], axis=-1)
        if sigma is None:
            sigma = 2.0 * half_width / (l - 1)
        sigma_inverse = np.eye(2) / (sigma * sigma)
        return cls(l=l, half_width=half_width,
                   anchor_positions=positions, sigma_inverse=sigma_inverse)


@dataclass(frozen=True)
class ObservationGrids:
    """The three channel grids: neighbors, obstacles, goal."""

    neighbor: AnchorGrid
    obstacle: AnchorGrid
    goal: AnchorGrid

    @classmethod
    def from_config(cls, cfg: ScenarioConfig, l: int = 11,
                    goal_half_width: float = 1.0) -> "ObservationGrids":
        """Neighbor grid spans the communication range, obstacle grid the
        detection range, goal grid a fixed tracking horizon."""
        return cls(
            neighbor=AnchorGrid.build(l, cfg.r_n),
            obstacle=AnchorGrid.build(l, cfg.r_o),
            goal=AnchorGrid.build(l, goal_half_width),
        )


@dataclass(frozen=True)
class Observation:
    """Three stacked l x l channels in the observing vehicle's body frame."""

    stacked: np.ndarray   # (3, l, l)

    @property
    def neighbor_channel(self) -> np.ndarray:
        return self.stacked[0]

    @property
    def obstacle_channel(self) -> np.ndarray:
        return self.stacked[1]

    @property
    def goal_channel(self) -> np.ndarray:
        return self.stacked[2]


def to_body_frame(target: np.ndarray, observer: VehiclePose) -> np.ndarray:
    """Express a world point in the observer's body frame (heading -> +x)."""
    dx = target[0] - observer.x
    dy = target[1] - observer.y
    c = math.cos(observer.heading)
    s = math.sin(observer.heading)
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def radial_intensity(p_body: np.ndarray, anchor: np.ndarray,
                     sigma_inverse: np.ndarray) -> float:
    """Gaussian radial response of one anchor to one body-frame point,
    exp(-d^T Sigma^-1 d); 1 at the anchor, decaying with Mahalanobis
    distance."""
    d = np.asarray(p_body, dtype=float) - np.asarray(anchor, dtype=float)
    return float(math.exp(-float(d @ sigma_inverse @ d)))


def _sum_channel(points_body: np.ndarray, grid: AnchorGrid) -> np.ndarray:
    """Sum of radial intensities of each source point over all anchors."""
    if points_body.shape[0] == 0:
        return np.zeros((grid.l, grid.l))
    d = points_body[:, None, None, :] - grid.anchor_positions[None, :, :, :]
    q = np.einsum("kija,ab,kijb->kij", d, grid.sigma_inverse, d)
    return np.exp(-q).sum(axis=0)


def encode_neighbor_channel(i: int, state: WorldState, sets: ProximitySets,
                            grid: AnchorGrid) -> np.ndarray:
    """Accumulated radial intensity of vehicle i's neighbors.

    Sources are accumulated in index order, so the result is exactly
    invariant to how the neighbor set happens to be ordered."""
    me = state.vehicles[i]
    pts = np.array([to_body_frame(state.vehicles[j].position(), me)
                    for j in sorted(sets.neighbor_sets[i])])
    return _sum_channel(pts.reshape(-1, 2), grid)


def encode_obstacle_channel(i: int, state: WorldState, sets: ProximitySets,
                            grid: AnchorGrid) -> np.ndarray:
    """Accumulated radial intensity of the obstacles vehicle i detects."""
    me = state.vehicles[i]
    pts = np.array([to_body_frame(state.obstacles[o], me)
                    for o in sorted(sets.obstacle_sets[i])])
    return _sum_channel(pts.reshape(-1, 2), grid)


def clamp_to_grid(p_body: np.ndarray, half_width: float) -> np.ndarray:
    """Pull a point outside the grid square back onto its boundary along
    the ray from the origin, preserving bearing."""
    m = max(abs(float(p_body[0])), abs(float(p_body[1])))
    if m > half_width:
        return p_body * (half_width / m)
    return np.asarray(p_body, dtype=float)


def encode_goal_channel(i: int, state: WorldState, grid: AnchorGrid) -> np.ndarray:
    """Radial intensity of the (single) waypoint; out-of-range waypoints are
    clamped to the grid boundary so bearing information survives."""
    me = state.vehicles[i]
    p = clamp_to_grid(to_body_frame(state.waypoint, me), grid.half_width)
    return _sum_channel(p.reshape(1, 2), grid)


def encode_observation(i: int, state: WorldState, sets: ProximitySets,
                       grids: ObservationGrids) -> Observation:
    """Stack the neighbor, obstacle, and goal channels for vehicle i."""
    stacked = np.stack([
        encode_neighbor_channel(i, state, sets, grids.neighbor),
        encode_obstacle_channel(i, state, sets, grids.obstacle),
        encode_goal_channel(i, state, grids.goal),
    ])
    return Observation(stacked=stacked)


def dump_channel_csv(channel: np.ndarray, path) -> None:
    """Debug dump of one channel as a CSV matrix."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(channel):
            writer.writerow([repr(float(v)) for v in row])
