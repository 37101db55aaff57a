"""Proximal-point machinery and the plain optimizers it is compared against."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .losses import proximal_penalty
from .mlp import ParamVector, ShapeError, polyak_update

SPI = "spi"
SGD = "sgd"
ADAM = "adam"

ProxFn = Callable[[float], float]
LossGradFn = Callable[[list[ParamVector]], tuple[float, list[ParamVector]]]


@dataclass
class SpiConfig:
    prox_strength: float = 1.0  # 1 / lambda
    tau: float = 0.005
    n_prox: int = 5
    learning_rate: float = 3e-4
    # optimizer of the inner proximal solve: plain gradient descent or Adam
    inner: str = "gd"

    def __post_init__(self):
        if self.prox_strength < 0.0:
            raise ValueError("prox_strength must be >= 0")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.n_prox < 1:
            raise ValueError("n_prox must be a positive integer")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.inner not in ("gd", ADAM):
            raise ValueError(f"unknown inner optimizer {self.inner!r}")


@dataclass
class OptimizerMode:
    variant: str = SPI
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.variant not in (SPI, SGD, ADAM):
            raise ValueError(f"unknown optimizer variant {self.variant!r}")


def prox_quadratic(y: float, lam: float, a: float) -> float:
    """Proximal map of ``f(x) = a x^2 / 2``: ``y / (1 + lam * a)``."""
    if not lam > 0.0:
        raise ValueError("lambda must be > 0")
    if a < 0.0:
        raise ValueError("curvature a must be >= 0 (non-convex f is out of contract)")
    return y / (1.0 + lam * a)


def prox_abs(y: float, lam: float) -> float:
    """Soft threshold, the proximal map of ``|x|``."""
    if not lam > 0.0:
        raise ValueError("lambda must be > 0")
    return float(np.sign(y) * max(abs(y) - lam, 0.0))


def damped_prox_iterate(x0: float, prox: ProxFn, tau: float, n_steps: int) -> list[float]:
    """Iterates ``x <- tau * x + (1 - tau) * prox(x)``; the returned list starts at ``x0``.

    Note that ``tau`` weights the *old* iterate here, unlike the target update
    in :func:`spi_step` where it weights the new one.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    xs = [x0]
    x = x0
    for _ in range(n_steps):
        x = tau * x + (1.0 - tau) * prox(x)
        xs.append(x)
    return xs


def hj_gradient(x: float, t: float, prox_tf: ProxFn) -> float:
    """Gradient of the Moreau envelope ``u(x, t)``: ``(x - prox_tf(x)) / t``."""
    if not t > 0.0:
        raise ValueError("t must be > 0")
    return (x - prox_tf(x)) / t


def _check_pairs(a: Sequence[ParamVector], b: Sequence[ParamVector]) -> None:
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ShapeError("parameter lists are not shape-consistent")


def sgd_step(params: list[ParamVector], grads: list[ParamVector], learning_rate: float) -> list[ParamVector]:
    _check_pairs(params, grads)
    return [p - learning_rate * g for p, g in zip(params, grads)]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[ParamVector], grads: list[ParamVector], state: AdamState,
              learning_rate: float) -> list[ParamVector]:
    """One bias-corrected Adam update; ``state`` is advanced in place."""
    _check_pairs(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    _check_pairs(params, state.m)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def spi_step(fast_params: list[ParamVector], target_params: list[ParamVector],
             batch_loss_gradient: LossGradFn, cfg: SpiConfig,
             inner_state: AdamState | None = None) -> tuple[list[ParamVector], list[ParamVector]]:
    """Approximate ``prox`` of the batch loss around the targets, then average the targets.

    Runs ``cfg.n_prox`` descent steps on ``loss(fast) + penalty(fast, target)``
    with the batch and targets frozen, then applies
    ``target <- tau * fast + (1 - tau) * target`` to every network. With
    ``cfg.inner == "adam"`` the inner steps use ``inner_state`` (persistent
    across calls) instead of plain gradient descent.
    """
    _check_pairs(fast_params, target_params)
    fast = list(fast_params)
    for _ in range(cfg.n_prox):
        _, grads = batch_loss_gradient(fast)
        _check_pairs(fast, grads)
        if cfg.prox_strength > 0.0:
            _, prox_grads = proximal_penalty(fast, target_params, cfg.prox_strength)
            grads = [g + pg for g, pg in zip(grads, prox_grads)]
        if cfg.inner == ADAM:
            if inner_state is None:
                raise ValueError("adam inner solve needs an AdamState")
            fast = adam_step(fast, grads, inner_state, cfg.learning_rate)
        else:
            fast = sgd_step(fast, grads, cfg.learning_rate)
    target = [polyak_update(t, f, cfg.tau) for t, f in zip(target_params, fast)]
    return fast, target
