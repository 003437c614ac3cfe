"""Per-vehicle composite reward and the neighbor-inclusive reward used for
training.

Four terms: a piecewise connectivity band per neighbor, a piecewise
obstacle-clearance penalty, a normalized waypoint-distance penalty, and an
action-effort penalty. The inclusive reward blends a vehicle's own total
with the mean total of its current neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .world import ControlInput, ProximitySets, ScenarioConfig, WorldState
from .observation import to_body_frame

# Reciprocal of the init-region diagonal: keeps the waypoint term within
# [-1, 0] over the arena, comparable to the unit-magnitude discrete terms.
DEFAULT_EPSILON = 1.0 / (2.0 * math.sqrt(2.0))


@dataclass(frozen=True)
class RewardWeights:
    """epsilon scales the waypoint distance; beta (negative) weights the
    squared action magnitude; lam mixes own vs. neighbor interest."""

    epsilon: float = DEFAULT_EPSILON
    beta: float = -0.1
    lam: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class RewardBreakdown:
    connectivity: float
    obstacle: float
    waypoint: float
    effort: float
    total: float
    inclusive: float


def connectivity_term(d_ij: float, r_n_prime: float, r_n: float) -> float:
    """+1 inside the band [r_n_prime, r_n], -1 below it, 0 otherwise."""
    if d_ij < r_n_prime:
        return -1.0
    if d_ij <= r_n:
        return 1.0
    return 0.0


def obstacle_term(d_io: float, r_o_prime: float) -> float:
    """-1 when strictly inside the minimum clearance, else 0."""
    return -1.0 if d_io < r_o_prime else 0.0


def waypoint_term(x_ig: np.ndarray, epsilon: float) -> float:
    """Negative normalized distance to the waypoint."""
    return -epsilon * float(np.linalg.norm(x_ig))


def reward_breakdown(
    i: int,
    state: WorldState,
    sets: ProximitySets,
    action: ControlInput,
    weights: RewardWeights,
    cfg: ScenarioConfig,
) -> RewardBreakdown:
    """All reward terms for vehicle i at the given state. The inclusive
    field is initialized to the own total; mixing in neighbor totals is a
    separate pass once every vehicle's total is known."""
    conn = sum(
        connectivity_term(sets.vehicle_distances[i, j], cfg.r_n_prime, cfg.r_n)
        for j in sets.neighbor_sets[i]
    )
    obst = sum(
        obstacle_term(sets.obstacle_distances[i, o], cfg.r_o_prime)
        for o in sets.obstacle_sets[i]
    )
    x_ig = to_body_frame(state.waypoint, state.vehicles[i])
    way = waypoint_term(x_ig, weights.epsilon)
    u = action.as_array()
    effort = weights.beta * float(u @ u)
    total = conn + obst + way + effort
    return RewardBreakdown(
        connectivity=float(conn), obstacle=float(obst), waypoint=way,
        effort=effort, total=total, inclusive=total,
    )


def composite_reward(
    i: int,
    state: WorldState,
    sets: ProximitySets,
    action: ControlInput,
    weights: RewardWeights,
    cfg: ScenarioConfig,
) -> float:
    return reward_breakdown(i, state, sets, action, weights, cfg).total


def inclusive_reward(r_self: float, neighbor_rewards: list[float], lam: float) -> float:
    """Convex mix of the own reward with the mean neighbor reward; with no
    neighbors the mean is undefined and the own reward is returned."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    if not neighbor_rewards:
        return r_self
    return lam * r_self + (1.0 - lam) * (sum(neighbor_rewards) / len(neighbor_rewards))


def compute_step_rewards(
    state: WorldState,
    sets: ProximitySets,
    actions: list[ControlInput],
    weights: RewardWeights,
    cfg: ScenarioConfig,
) -> list[RewardBreakdown]:
    """Breakdowns for every vehicle at one state, inclusive rewards filled
    in from the neighbors' totals."""
    own = [
        reward_breakdown(i, state, sets, actions[i], weights, cfg)
        for i in range(state.n_vehicles)
    ]
    out = []
    for i, b in enumerate(own):
        neigh = [own[j].total for j in sets.neighbor_sets[i]]
        out.append(replace(b, inclusive=inclusive_reward(b.total, neigh, weights.lam)))
    return out


REWARD_LOG_HEADER = (
    "episode", "step", "vehicle",
    "connectivity", "obstacle", "waypoint", "effort", "total", "inclusive",
)
