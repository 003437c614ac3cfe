"""Deterministic actor-critic learner with target networks.

One shared (actor, critic) pair serves every vehicle. The critic regresses
onto the bootstrapped target r + gamma * Q'(s', mu'(s')); the actor ascends
the critic's value at its own action; targets trail the online networks
through an elementwise soft blend.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nets
from .checkpoint import load_checkpoint, save_checkpoint
from .nets import (
    AdamState, Conv, Dense, Flatten, NetworkSpec, OutputScale, ParameterSet,
    Relu, Tanh, adam_update, backward, forward,
)
from .observation import Observation
from .replay import Minibatch
from .world import ControlInput


def actor_spec(obs_shape: tuple[int, int, int], v_max: float,
               omega_max: float) -> NetworkSpec:
    """Conv stack, two dense hidden layers, tanh head scaled into
    [0, v_max] x [-omega_max, omega_max]."""
    return NetworkSpec(
        input_shape=obs_shape,
        state_layers=(
            Conv(8, 3), Relu(),
            Conv(16, 3), Relu(),
            Flatten(),
            Dense(128), Relu(),
            Dense(64), Relu(),
            Dense(2), Tanh(),
            OutputScale(bias=(v_max / 2.0, 0.0), bound=(v_max / 2.0, omega_max)),
        ),
    )


def critic_spec(obs_shape: tuple[int, int, int]) -> NetworkSpec:
    """Same conv stack on the state path, one hidden layer on the action
    path, paths summed into a two-layer head producing the scalar value."""
    return NetworkSpec(
        input_shape=obs_shape,
        state_layers=(
            Conv(8, 3), Relu(),
            Conv(16, 3), Relu(),
            Flatten(),
            Dense(128), Relu(),
            Dense(64), Relu(),
        ),
        action_dim=2,
        action_layers=(Dense(64), Relu()),
        head_layers=(Dense(64), Relu(), Dense(1)),
    )


def action_bounds(spec: NetworkSpec) -> tuple[np.ndarray, np.ndarray]:
    """(bias, bound) vectors of the actor's output scaling layer."""
    last = spec.state_layers[-1]
    if not isinstance(last, OutputScale):
        raise ValueError("actor spec does not end with an output scaling layer")
    return np.asarray(last.bias), np.asarray(last.bound)


@dataclass
class LearnerState:
    actor_spec: NetworkSpec
    critic_spec: NetworkSpec
    actor: ParameterSet
    critic: ParameterSet
    target_actor: ParameterSet
    target_critic: ParameterSet
    actor_adam: AdamState
    critic_adam: AdamState
    gamma: float
    tau: float


def init_learner(
    obs_shape: tuple[int, int, int],
    v_max: float,
    omega_max: float,
    rng: np.random.Generator,
    gamma: float = 0.95,
    tau: float = 0.01,
    learning_rate: float = 1e-3,
) -> LearnerState:
    """Fresh online networks with targets initialized as exact copies."""
    a_spec = actor_spec(obs_shape, v_max, omega_max)
    c_spec = critic_spec(obs_shape)
    actor = nets.init_parameters(a_spec, rng)
    critic = nets.init_parameters(c_spec, rng)
    return LearnerState(
        actor_spec=a_spec,
        critic_spec=c_spec,
        actor=actor,
        critic=critic,
        target_actor=actor.copy(),
        target_critic=critic.copy(),
        actor_adam=AdamState.initial(actor, learning_rate=learning_rate),
        critic_adam=AdamState.initial(critic, learning_rate=learning_rate),
        gamma=gamma,
        tau=tau,
    )


def _obs_array(observation) -> np.ndarray:
    if isinstance(observation, Observation):
        return observation.stacked
    return np.asarray(observation, dtype=float)


def normalize_actions(actions: np.ndarray, learner: "LearnerState") -> np.ndarray:
    """Map raw actions into [-1, 1]^2 for the critic's action input.

    The raw components live on very different scales (linear velocity is
    two orders of magnitude smaller than angular velocity), which starves
    the critic's velocity sensitivity; the critic therefore always
    consumes the affinely normalized action."""
    bias, bound = action_bounds(learner.actor_spec)
    return (actions - bias) / bound


def critic_value(observations: np.ndarray, actions: np.ndarray,
                 learner: "LearnerState", params: ParameterSet | None = None,
                 target: bool = False):
    """Q(s, a) through the production pipeline (action normalization
    included); returns (values, cache). actions are raw (executed) units."""
    if params is None:
        params = learner.target_critic if target else learner.critic
    return forward(learner.critic_spec, params, observations,
                   normalize_actions(np.asarray(actions, dtype=float), learner))


def act(observation, learner: LearnerState, noise_scale: float,
        rng: np.random.Generator | None = None) -> ControlInput:
    """Policy output plus optional Gaussian exploration noise, clipped to
    the action box. noise_scale=0 gives the pure deterministic policy and
    consumes no randomness."""
    obs = _obs_array(observation)
    out, _ = forward(learner.actor_spec, learner.actor, obs[None])
    a = out[0]
    bias, bound = action_bounds(learner.actor_spec)
    if noise_scale > 0.0:
        if rng is None:
            raise ValueError("exploration noise requested without an rng")
        a = a + rng.normal(0.0, 1.0, size=a.shape) * (noise_scale * bound)
    a = np.clip(a, bias - bound, bias + bound)
    return ControlInput(float(a[0]), float(a[1]))


def policy_actions(observations: np.ndarray, learner: LearnerState) -> np.ndarray:
    """Batched pure-policy actions (no noise), for evaluation pipelines."""
    out, _ = forward(learner.actor_spec, learner.actor, observations)
    return out


def target_value(batch: Minibatch, learner: LearnerState) -> np.ndarray:
    """Bootstrapped regression target using target networks only."""
    a_next, _ = forward(learner.actor_spec, learner.target_actor,
                        batch.next_observations)
    q_next, _ = critic_value(batch.next_observations, a_next, learner,
                             target=True)
    return batch.rewards + learner.gamma * q_next[:, 0]


def critic_update(batch: Minibatch, learner: LearnerState) -> tuple[LearnerState, float]:
    """One Adam step on the mean squared error against the bootstrapped
    target; returns the pre-update loss. Actor parameters are untouched."""
    y = target_value(batch, learner)
    q, cache = critic_value(batch.observations, batch.actions, learner)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    s = len(batch)
    dq = (2.0 / s) * err[:, None]
    grads, _, _ = backward(learner.critic_spec, learner.critic, cache, dq,
                           need_input_grad=False, need_action_grad=False)
    new_critic, new_adam = adam_update(learner.critic, grads, learner.critic_adam)
    return replace(learner, critic=new_critic, critic_adam=new_adam), loss


def actor_update(batch: Minibatch, learner: LearnerState) -> LearnerState:
    """One Adam ascent step on mean_t Q(s_t, mu(s_t)); the policy gradient
    is chained through the critic's action input. Critic parameters are
    treated as constants."""
    a, a_cache = forward(learner.actor_spec, learner.actor, batch.observations)
    _, q_cache = critic_value(batch.observations, a, learner)
    s = len(batch)
    dq = np.full((s, 1), 1.0 / s)
    _, _, d_action = backward(learner.critic_spec, learner.critic, q_cache, dq,
                              need_param_grads=False, need_input_grad=False,
                              need_action_grad=True)
    # Chain through the critic-side action normalization back to raw units.
    _, bound = action_bounds(learner.actor_spec)
    d_action = d_action / bound
    grads, _, _ = backward(learner.actor_spec, learner.actor, a_cache, d_action,
                           need_input_grad=False)
    # Adam descends; feed the negated gradient to ascend the objective.
    new_actor, new_adam = adam_update(learner.actor, grads.scale(-1.0),
                                      learner.actor_adam)
    return replace(learner, actor=new_actor, actor_adam=new_adam)


def soft_update(learner: LearnerState) -> LearnerState:
    """Blend both target networks toward the online networks by tau."""
    return replace(
        learner,
        target_critic=nets.blend(learner.target_critic, learner.critic, learner.tau),
        target_actor=nets.blend(learner.target_actor, learner.actor, learner.tau),
    )


# --------------------------------------------------------------------------
# Persistence


def _pack_params(prefix: str, params: ParameterSet, arrays: dict) -> None:
    for name, value in zip(params.names, params.values):
        arrays[f"{prefix}/{name}"] = value


def _unpack_params(prefix: str, names, arrays: dict) -> ParameterSet:
    return ParameterSet.from_arrays(names, [arrays[f"{prefix}/{n}"] for n in names])


def _adam_meta(state: AdamState) -> dict:
    return {"step": state.step, "learning_rate": state.learning_rate,
            "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps}


def save_learner(path, learner: LearnerState, extra_meta: dict | None = None) -> None:
    """Checkpoint online and target networks plus both Adam states."""
    meta = {
        "kind": "learner",
        "actor_spec": nets.spec_to_json(learner.actor_spec),
        "critic_spec": nets.spec_to_json(learner.critic_spec),
        "actor_names": list(learner.actor.names),
        "critic_names": list(learner.critic.names),
        "actor_adam": _adam_meta(learner.actor_adam),
        "critic_adam": _adam_meta(learner.critic_adam),
        "gamma": learner.gamma,
        "tau": learner.tau,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    arrays: dict[str, np.ndarray] = {}
    _pack_params("actor", learner.actor, arrays)
    _pack_params("critic", learner.critic, arrays)
    _pack_params("target_actor", learner.target_actor, arrays)
    _pack_params("target_critic", learner.target_critic, arrays)
    _pack_params("actor_adam_m", learner.actor_adam.m, arrays)
    _pack_params("actor_adam_v", learner.actor_adam.v, arrays)
    _pack_params("critic_adam_m", learner.critic_adam.m, arrays)
    _pack_params("critic_adam_v", learner.critic_adam.v, arrays)
    save_checkpoint(path, meta, arrays)


def load_learner(path) -> tuple[LearnerState, dict]:
    """Restore a learner checkpoint; returns (learner, extra_meta)."""
    meta, arrays = load_checkpoint(path)
    actor_names = meta["actor_names"]
    critic_names = meta["critic_names"]
    am = meta["actor_adam"]
    cm = meta["critic_adam"]
    learner = LearnerState(
        actor_spec=nets.spec_from_json(meta["actor_spec"]),
        critic_spec=nets.spec_from_json(meta["critic_spec"]),
        actor=_unpack_params("actor", actor_names, arrays),
        critic=_unpack_params("critic", critic_names, arrays),
        target_actor=_unpack_params("target_actor", actor_names, arrays),
        target_critic=_unpack_params("target_critic", critic_names, arrays),
        actor_adam=AdamState(
            m=_unpack_params("actor_adam_m", actor_names, arrays),
            v=_unpack_params("actor_adam_v", actor_names, arrays),
            step=am["step"], learning_rate=am["learning_rate"],
            beta1=am["beta1"], beta2=am["beta2"], eps=am["eps"],
        ),
        critic_adam=AdamState(
            m=_unpack_params("critic_adam_m", critic_names, arrays),
            v=_unpack_params("critic_adam_v", critic_names, arrays),
            step=cm["step"], learning_rate=cm["learning_rate"],
            beta1=cm["beta1"], beta2=cm["beta2"], eps=cm["eps"],
        ),
        gamma=meta["gamma"],
        tau=meta["tau"],
    )
    return learner, meta.get("extra", {})
