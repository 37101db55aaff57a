"""Scalar objectives of the actor-critic: TD regression, policy loss, proximal penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mlp import Mlp, ParamVector, ShapeError, backward_cache, forward_cache

HUBER_DELTA = 1.0

HUBER = "huber"
MSE = "mse"
AVG_TARGETS = "avg_targets"
SINGLE_TARGET_Q1 = "single_target_q1"
# which critics the policy term reads: the target pair (SPI-AC) or fast Q1 (TD3)
TARGET_CRITICS = "target"
FAST_CRITIC = "fast"


@dataclass
class TdTargetInputs:
    reward: float
    done: bool
    gamma: float
    q1_target: float
    q2_target: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")


@dataclass
class LossBreakdown:
    td1: float
    td2: float
    policy: float
    total: float


@dataclass
class Batch:
    """A minibatch of transitions; ``next_actions`` already carry target smoothing noise."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    next_actions: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class LossResult:
    breakdown: LossBreakdown
    # gradients for (policy, q1, q2), in that order
    grads: list[ParamVector]
    td_targets: np.ndarray
    # r + gamma * (1 - done) * Q'_i(s', a') for each target critic, shape (n, 2)
    bootstrap: np.ndarray


def huber(residual: float) -> tuple[float, float]:
    if not math.isfinite(residual):
        raise ValueError(f"non-finite residual {residual}")
    a = abs(residual)
    if a <= HUBER_DELTA:
        return 0.5 * residual * residual, residual
    return HUBER_DELTA * (a - 0.5 * HUBER_DELTA), math.copysign(HUBER_DELTA, residual)


def huber_array(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.abs(r)
    value = np.where(a <= HUBER_DELTA, 0.5 * r * r, HUBER_DELTA * (a - 0.5 * HUBER_DELTA))
    return value, np.clip(r, -HUBER_DELTA, HUBER_DELTA)


def mse_array(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return r * r, 2.0 * r


def td_target(inp: TdTargetInputs) -> float:
    if inp.done:
        return inp.reward
    return inp.reward + inp.gamma * min(inp.q1_target, inp.q2_target)


def policy_loss(q1_target_value: float, q2_target_value: float) -> float:
    return -0.5 * (q1_target_value + q2_target_value)


def td_targets(batch: Batch, q1_target: Mlp, q2_target: Mlp, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Regression targets ``y`` (n,) and per-critic bootstrap estimates (n, 2)."""
    n = len(batch)
    next_sa = np.concatenate([batch.next_states, batch.next_actions], axis=1)
    q1_next, _ = forward_cache(q1_target, next_sa)
    q2_next, _ = forward_cache(q2_target, next_sa)
    not_done = 1.0 - batch.dones.astype(np.float64).reshape(n, 1)
    rewards = batch.rewards.reshape(n, 1)
    bootstrap = rewards + gamma * not_done * np.concatenate([q1_next, q2_next], axis=1)
    y = rewards + gamma * not_done * np.minimum(q1_next, q2_next)
    return y.ravel(), bootstrap


def combined_batch_loss(batch: Batch, policy: Mlp, q1: Mlp, q2: Mlp, q1_target: Mlp, q2_target: Mlp,
                        *, gamma: float, beta: float, loss_kind: str = HUBER,
                        policy_value: str = AVG_TARGETS,
                        policy_critics: str = TARGET_CRITICS,
                        targets: tuple[np.ndarray, np.ndarray] | None = None) -> LossResult:
    """Mean TD losses of both critics plus ``beta`` times the mean policy loss.

    Gradient flow: the regression target ``y`` is a constant, target critic
    parameters never receive gradient, and the policy term only reaches the
    policy parameters (through the action input of the critics it reads).
    ``targets`` may carry a precomputed ``td_targets(...)`` result.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    if beta < 0.0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    if loss_kind == HUBER:
        loss_fn = huber_array
    elif loss_kind == MSE:
        loss_fn = mse_array
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")

    obs_dim = batch.states.shape[1]
    y_flat, bootstrap = td_targets(batch, q1_target, q2_target, gamma) if targets is None else targets
    y = y_flat.reshape(n, 1)

    sa = np.concatenate([batch.states, batch.actions], axis=1)
    td_values = []
    critic_grads = []
    for critic in (q1, q2):
        q, acts = forward_cache(critic, sa)
        value, dvalue = loss_fn(q - y)
        td_values.append(float(value.mean()))
        critic_grads.append(backward_cache(critic, acts, dvalue / n, want_input=False).param_grad)

    pi, pi_acts = forward_cache(policy, batch.states)
    s_pi = np.concatenate([batch.states, pi], axis=1)
    if policy_critics == TARGET_CRITICS:
        readers = [q1_target, q2_target]
    elif policy_critics == FAST_CRITIC:
        readers = [q1, q2]
    else:
        raise ValueError(f"unknown policy critics {policy_critics!r}")
    if policy_value == AVG_TARGETS:
        weights = [0.5, 0.5]
    elif policy_value == SINGLE_TARGET_Q1:
        weights = [1.0, 0.0]
    else:
        raise ValueError(f"unknown policy value {policy_value!r}")

    policy_term = np.zeros((n, 1))
    dloss_daction = np.zeros_like(pi)
    for w, critic in zip(weights, readers):
        if w == 0.0:
            continue
        q, acts = forward_cache(critic, s_pi)
        policy_term -= w * q
        g = backward_cache(critic, acts, np.full((n, 1), -w * beta / n), want_params=False)
        dloss_daction += g.input_grad[:, obs_dim:]
    policy_value_mean = float(policy_term.mean())
    policy_grad = backward_cache(policy, pi_acts, dloss_daction, want_input=False).param_grad

    total = td_values[0] + td_values[1] + beta * policy_value_mean
    breakdown = LossBreakdown(td_values[0], td_values[1], policy_value_mean, total)
    return LossResult(breakdown, [policy_grad] + critic_grads, y_flat, bootstrap)


def proximal_penalty(fast: list[ParamVector], target: list[ParamVector],
                     strength: float) -> tuple[float, list[ParamVector]]:
    """``strength * sum_nets 0.5 * mean((fast - target)^2)`` and its gradient in ``fast``."""
    if len(fast) != len(target):
        raise ShapeError("fast and target lists differ in length")
    if strength < 0.0:
        raise ValueError(f"strength must be non-negative, got {strength}")
    value = 0.0
    grads = []
    for f, t in zip(fast, target):
        if f.shape != t.shape:
            raise ShapeError(f"length mismatch: {f.shape} vs {t.shape}")
        diff = f - t
        value += 0.5 * float(np.mean(diff * diff))
        grads.append(strength * diff / diff.size)
    return strength * value, grads
