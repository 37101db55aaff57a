"""Small deterministic continuous-control environments.

Each environment exposes a pure ``*_step`` function over an explicit state and
a thin stateful wrapper that adds the time limit, action clamping statistics
and seeded resets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PENDULUM_DT = 0.05
PENDULUM_G = 10.0
PENDULUM_M = 1.0
PENDULUM_L = 1.0
PENDULUM_MAX_SPEED = 8.0
PENDULUM_MAX_TORQUE = 2.0

REACHER_DT = 0.05
REACHER_DAMPING = 0.99
REACHER_GOAL_RADIUS = 0.05

LQR_A = np.array([[1.0, 0.1], [0.0, 1.0]])
LQR_B = np.array([[0.0], [0.1]])
LQR_Q = np.eye(2)
LQR_R = 0.1 * np.eye(1)
LQR_DIVERGENCE = 100.0
# the clipped optimal policy keeps >99% of the unconstrained optimal return from the reset box
LQR_ACTION_BOUND = 4.0

MAX_EPISODE_STEPS = 200


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    act_dim: int
    action_bound: np.ndarray
    max_episode_steps: int
    dt: float


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    truncated: bool = False


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = (theta + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if w == -np.pi else float(w)


def pendulum_step(state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """``state = (cos th, sin th, th_dot)`` with th = 0 upright; torque already in bounds."""
    cos_th, sin_th, th_dot = state
    th = np.arctan2(sin_th, cos_th)
    u = float(np.asarray(action).reshape(-1)[0])
    reward = -(wrap_angle(th) ** 2 + 0.1 * th_dot ** 2 + 0.001 * u ** 2)
    acc = 3.0 * PENDULUM_G / (2.0 * PENDULUM_L) * np.sin(th) + 3.0 / (PENDULUM_M * PENDULUM_L ** 2) * u
    new_th_dot = float(np.clip(th_dot + acc * PENDULUM_DT, -PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED))
    new_th = th + new_th_dot * PENDULUM_DT
    return np.array([np.cos(new_th), np.sin(new_th), new_th_dot]), float(reward), False


def reacher2d_step(state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """``state = (pos, vel, goal)``; damped double integrator in the plane."""
    pos, vel, goal = state[0:2], state[2:4], state[4:6]
    u = np.asarray(action, dtype=np.float64).reshape(2)
    new_vel = REACHER_DAMPING * vel + u * REACHER_DT
    new_pos = pos + new_vel * REACHER_DT
    dist = float(np.linalg.norm(new_pos - goal))
    reward = -dist - 0.01 * float(u @ u)
    return np.concatenate([new_pos, new_vel, goal]), reward, dist < REACHER_GOAL_RADIUS


def lqr_step(state: np.ndarray, action: np.ndarray, A: np.ndarray = LQR_A, B: np.ndarray = LQR_B,
             Qc: np.ndarray = LQR_Q, Rc: np.ndarray = LQR_R) -> tuple[np.ndarray, float, bool]:
    x = np.asarray(state, dtype=np.float64)
    u = np.asarray(action, dtype=np.float64).reshape(B.shape[1])
    reward = -float(x @ Qc @ x + u @ Rc @ u)
    x_next = A @ x + B @ u
    return x_next, reward, bool(np.linalg.norm(x_next) > LQR_DIVERGENCE)


class Env:
    """Stateful wrapper: time limit, clamping, seeded resets."""

    spec: EnvSpec

    def __init__(self):
        self.state: np.ndarray | None = None
        self.t = 0
        self.stats = {"clamped_actions": 0}

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _step(self, state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        raise NotImplementedError

    def observe(self, state: np.ndarray) -> np.ndarray:
        return state.copy()

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.state = self._initial_state(rng)
        self.t = 0
        return self.observe(self.state)

    def step(self, action: np.ndarray) -> StepResult:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim)
        bound = self.spec.action_bound
        clipped = np.clip(a, -bound, bound)
        if np.any(clipped != a):
            self.stats["clamped_actions"] += 1
        self.state, reward, done = self._step(self.state, clipped)
        self.t += 1
        truncated = not done and self.t >= self.spec.max_episode_steps
        return StepResult(self.observe(self.state), reward, done, truncated)


class PendulumEnv(Env):
    spec = EnvSpec(3, 1, np.array([PENDULUM_MAX_TORQUE]), MAX_EPISODE_STEPS, PENDULUM_DT)

    def _initial_state(self, rng):
        th = rng.uniform(-np.pi, np.pi)
        th_dot = rng.uniform(-1.0, 1.0)
        return np.array([np.cos(th), np.sin(th), th_dot])

    def _step(self, state, action):
        return pendulum_step(state, action)


class Reacher2dEnv(Env):
    spec = EnvSpec(6, 2, np.array([1.0, 1.0]), MAX_EPISODE_STEPS, REACHER_DT)

    def _initial_state(self, rng):
        pos = rng.uniform(-1.0, 1.0, size=2)
        goal = rng.uniform(-1.0, 1.0, size=2)
        return np.concatenate([pos, np.zeros(2), goal])

    def _step(self, state, action):
        return reacher2d_step(state, action)


class LqrEnv(Env):
    spec = EnvSpec(2, 1, np.array([LQR_ACTION_BOUND]), MAX_EPISODE_STEPS, 0.1)

    def _initial_state(self, rng):
        return rng.uniform(-1.0, 1.0, size=2)

    def _step(self, state, action):
        return lqr_step(state, action)


ENVS = {"pendulum": PendulumEnv, "reacher2d": Reacher2dEnv, "lqr": LqrEnv}


def make_env(env_id: str) -> Env:
    try:
        return ENVS[env_id]()
    except KeyError:
        raise ValueError(f"unknown env id {env_id!r}; choose from {sorted(ENVS)}") from None


def reset(env: Env, seed: int) -> np.ndarray:
    return env.reset(seed)


# --- LQR oracle -------------------------------------------------------------

@dataclass
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray  # optimal action is u = -K x
    iterations: int
    residual: float = field(default=0.0)


def discounted_riccati(gamma: float = 1.0, A: np.ndarray = LQR_A, B: np.ndarray = LQR_B,
                       Qc: np.ndarray = LQR_Q, Rc: np.ndarray = LQR_R, tol: float = 1e-10,
                       max_iter: int = 100_000) -> RiccatiSolution:
    """Value iteration on the discounted Riccati equation until ``max|dP| < tol``.

    ``V(x) = -x^T P x`` is the optimal discounted return of a step reward
    ``-(x^T Qc x + u^T Rc u)`` charged on the pre-transition state.
    """
    P = Qc.copy()
    for it in range(1, max_iter + 1):
        S = Rc + gamma * B.T @ P @ B
        K = gamma * np.linalg.solve(S, B.T @ P @ A)
        P_new = Qc + gamma * A.T @ P @ A - gamma * A.T @ P @ B @ K
        P_new = 0.5 * (P_new + P_new.T)
        delta = float(np.max(np.abs(P_new - P)))
        P = P_new
        if delta < tol:
            break
    else:
        raise RuntimeError("Riccati iteration did not converge")
    S = Rc + gamma * B.T @ P @ B
    K = gamma * np.linalg.solve(S, B.T @ P @ A)
    return RiccatiSolution(P, K, it, delta)


def finite_horizon_gains(horizon: int, A: np.ndarray = LQR_A, B: np.ndarray = LQR_B,
                         Qc: np.ndarray = LQR_Q, Rc: np.ndarray = LQR_R) -> tuple[list[np.ndarray], np.ndarray]:
    """Backward Riccati recursion for the undiscounted ``horizon``-step problem.

    Returns the time-indexed gains ``K_0 .. K_{H-1}`` and the cost-to-go matrix
    ``P_0`` so that the optimal return from ``x0`` is ``-x0^T P_0 x0``.
    """
    P = np.zeros_like(Qc)
    gains = []
    for _ in range(horizon):
        S = Rc + B.T @ P @ B
        K = np.linalg.solve(S, B.T @ P @ A)
        P = Qc + A.T @ P @ A - A.T @ P @ B @ K
        P = 0.5 * (P + P.T)
        gains.append(K)
    gains.reverse()
    return gains, P


def lqr_optimal_return(x0: np.ndarray, horizon: int = MAX_EPISODE_STEPS) -> float:
    """Best achievable undiscounted return of a ``horizon``-step LQR episode from ``x0``."""
    _, P0 = finite_horizon_gains(horizon)
    x0 = np.asarray(x0, dtype=np.float64)
    return -float(x0 @ P0 @ x0)
