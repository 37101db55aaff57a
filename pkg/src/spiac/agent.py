"""Twin-critic deterministic actor-critic trained by stochastic proximal iteration.

The three fast networks (policy, q1, q2) are the inner variable of a proximal
step anchored at their targets; the targets then move toward the result by
Polyak averaging. ``OptimizerMode.variant`` set to ``sgd`` or ``adam`` turns
the same agent into a TD3-style baseline with ordinary per-batch steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np

from . import losses
from .losses import Batch, LossBreakdown, combined_batch_loss, td_targets
from .mlp import IDENTITY, TANH, Mlp, deserialize_params, forward, mlp_init, polyak_update, serialize_params
from .spi import ADAM, SGD, SPI, AdamState, OptimizerMode, SpiConfig, adam_step, sgd_step, spi_step


class NotReadyError(RuntimeError):
    """The replay buffer cannot serve the requested sample yet."""


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling with replacement."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def store(self, tr: Transition) -> None:
        i = self._next
        self.states[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_states[i] = tr.next_state
        self.dones[i] = tr.done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("sample size must be >= 1")
        if self.size == 0:
            raise NotReadyError("replay buffer is empty")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform i.i.d. draw; ``next_actions`` is left equal to the stored actions."""
        idx = self.sample_indices(n, rng)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx], self.actions[idx])

    def get(self, i: int) -> Transition:
        """The ``i``-th oldest stored transition."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        j = (self._next - self.size + i) % self.capacity
        return Transition(self.states[j].copy(), self.actions[j].copy(), float(self.rewards[j]),
                          self.next_states[j].copy(), bool(self.dones[j]))


def buffer_store(buffer: ReplayBuffer, tr: Transition) -> None:
    buffer.store(tr)


def buffer_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(n, rng)


@dataclass
class AgentConfig:
    gamma: float = 0.99
    batch_size: int = 256
    explore_sigma: float = 0.1
    action_noise_sigma: float = 0.2
    noise_clip: float = 0.5
    beta: float = 0.01
    burn_in: int = 10_000
    policy_weight_decay: float = 1e-5
    spi: SpiConfig = field(default_factory=SpiConfig)
    optimizer: OptimizerMode = field(default_factory=OptimizerMode)
    loss_kind: str = losses.HUBER
    policy_value: str = losses.AVG_TARGETS
    policy_critics: str = losses.TARGET_CRITICS
    delayed_policy_period: int = 1
    hidden_sizes: tuple[int, ...] = (256, 256)
    buffer_capacity: int = 1_000_000

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.explore_sigma, self.action_noise_sigma) < 0.0:
            raise ValueError("noise scales must be >= 0")
        if not self.noise_clip > 0.0:
            raise ValueError("noise_clip must be > 0")
        if self.delayed_policy_period < 1:
            raise ValueError("delayed_policy_period must be >= 1")
        if self.loss_kind not in (losses.HUBER, losses.MSE):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")
        if self.policy_value not in (losses.AVG_TARGETS, losses.SINGLE_TARGET_Q1):
            raise ValueError(f"unknown policy_value {self.policy_value!r}")
        if self.policy_critics not in (losses.TARGET_CRITICS, losses.FAST_CRITIC):
            raise ValueError(f"unknown policy_critics {self.policy_critics!r}")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)


def td3_baseline_config(variant: str = ADAM, **overrides) -> AgentConfig:
    """TD3-style reference: MSE critics, fast-Q1 policy loss, policy delay 2."""
    kw = dict(optimizer=OptimizerMode(variant=variant), loss_kind=losses.MSE,
              policy_value=losses.SINGLE_TARGET_Q1, policy_critics=losses.FAST_CRITIC,
              delayed_policy_period=2)
    kw.update(overrides)
    return AgentConfig(**kw)


@dataclass
class ActorCriticBundle:
    policy: Mlp
    q1: Mlp
    q2: Mlp
    policy_target: Mlp
    q1_target: Mlp
    q2_target: Mlp

    NAMES = ("policy", "q1", "q2", "policy_target", "q1_target", "q2_target")

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, action_bound: np.ndarray,
               hidden_sizes: tuple[int, ...], seed: int) -> "ActorCriticBundle":
        seeds = np.random.SeedSequence(seed).generate_state(3)
        policy = mlp_init([obs_dim, *hidden_sizes, act_dim], TANH, int(seeds[0]), action_bound)
        q1 = mlp_init([obs_dim + act_dim, *hidden_sizes, 1], IDENTITY, int(seeds[1]))
        q2 = mlp_init([obs_dim + act_dim, *hidden_sizes, 1], IDENTITY, int(seeds[2]))
        return cls(policy, q1, q2, policy.copy(), q1.copy(), q2.copy())

    @property
    def fast(self) -> list[Mlp]:
        return [self.policy, self.q1, self.q2]

    @property
    def targets(self) -> list[Mlp]:
        return [self.policy_target, self.q1_target, self.q2_target]

    def all_nets(self) -> list[Mlp]:
        return [getattr(self, n) for n in self.NAMES]


@dataclass
class TrainStats:
    train_steps: int = 0
    min_target_checks: int = 0
    min_target_violations: int = 0


class Agent:
    def __init__(self, cfg: AgentConfig, obs_dim: int, act_dim: int, action_bound: np.ndarray, seed: int):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.action_bound = np.broadcast_to(np.asarray(action_bound, dtype=np.float64), (act_dim,)).copy()
        self.bundle = ActorCriticBundle.create(obs_dim, act_dim, self.action_bound, cfg.hidden_sizes, seed)
        self.env_steps = 0
        self.stats = TrainStats()
        opt = cfg.optimizer
        self._inner_adam = AdamState(opt.adam_beta1, opt.adam_beta2, opt.adam_eps)
        self._net_adam = [AdamState(opt.adam_beta1, opt.adam_beta2, opt.adam_eps) for _ in range(3)]

    # --- acting -------------------------------------------------------------

    def act(self, state: np.ndarray) -> np.ndarray:
        """Deterministic action of the fast policy."""
        return forward(self.bundle.policy, state)

    def act_explore(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Uniform random during burn-in, then the policy plus clipped Gaussian noise."""
        b = self.action_bound
        burning_in = self.env_steps < self.cfg.burn_in
        self.env_steps += 1
        if burning_in:
            return rng.uniform(-b, b)
        a = self.act(state) + rng.normal(0.0, 1.0, size=self.act_dim) * self.cfg.explore_sigma * b
        return np.clip(a, -b, b)

    def smooth_target_action(self, next_states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Target policy action plus clipped noise, clipped to the action bounds."""
        b = self.action_bound
        a = forward(self.bundle.policy_target, next_states)
        eps = rng.normal(0.0, 1.0, size=a.shape) * self.cfg.action_noise_sigma * b
        return np.clip(a + clip_noise(eps, self.cfg.noise_clip * b), -b, b)

    # --- learning -----------------------------------------------------------

    def _loss_and_grads(self, batch: Batch, y: np.ndarray, fast: list[np.ndarray]):
        b = self.bundle
        cfg = self.cfg
        for net, p in zip(b.fast, fast):
            net.params = p
        res = combined_batch_loss(batch, b.policy, b.q1, b.q2, b.q1_target, b.q2_target,
                                  gamma=cfg.gamma, beta=cfg.beta, loss_kind=cfg.loss_kind,
                                  policy_value=cfg.policy_value, policy_critics=cfg.policy_critics,
                                  targets=y)
        if not np.isfinite(res.breakdown.total):
            raise FloatingPointError(f"non-finite loss {res.breakdown}")
        if cfg.policy_weight_decay:
            res.grads[0] = res.grads[0] + cfg.policy_weight_decay * fast[0]
        return res

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator) -> LossBreakdown | None:
        """One update from a fresh minibatch; ``None`` while the buffer is too small."""
        cfg = self.cfg
        if buffer.size < cfg.batch_size:
            return None
        batch = buffer.sample(cfg.batch_size, rng)
        batch.next_actions = self.smooth_target_action(batch.next_states, rng)
        b = self.bundle
        y = td_targets(batch, b.q1_target, b.q2_target, cfg.gamma)
        self._check_min_target(*y)

        first: list[LossBreakdown] = []

        def loss_grad(fast):
            res = self._loss_and_grads(batch, y, fast)
            if not first:
                first.append(res.breakdown)
            return res.breakdown.total, res.grads

        fast0 = [n.params for n in b.fast]
        targets0 = [n.params for n in b.targets]
        if cfg.optimizer.variant == SPI:
            fast, targets = spi_step(fast0, targets0, loss_grad, cfg.spi, self._inner_adam)
        else:
            fast, targets = self._baseline_step(fast0, targets0, loss_grad)
        for net, p in zip(b.fast, fast):
            net.params = p
        for net, p in zip(b.targets, targets):
            net.params = p
        self.stats.train_steps += 1
        return first[0]

    def _baseline_step(self, fast0, targets0, loss_grad):
        cfg = self.cfg
        lr = cfg.spi.learning_rate
        _, grads = loss_grad(fast0)
        update_policy = self.stats.train_steps % cfg.delayed_policy_period == 0
        active = [0, 1, 2] if update_policy else [1, 2]
        fast = list(fast0)
        for i in active:
            if cfg.optimizer.variant == SGD:
                (fast[i],) = sgd_step([fast0[i]], [grads[i]], lr)
            else:
                (fast[i],) = adam_step([fast0[i]], [grads[i]], self._net_adam[i], lr)
        if not update_policy:
            return fast, list(targets0)
        targets = [polyak_update(t, f, cfg.spi.tau) for t, f in zip(targets0, fast)]
        return fast, targets

    def _check_min_target(self, y: np.ndarray, bootstrap: np.ndarray) -> None:
        self.stats.min_target_checks += y.size
        ok = (y[:, None] <= bootstrap).all(axis=1)
        self.stats.min_target_violations += int(y.size - ok.sum())

    # --- checkpoints --------------------------------------------------------

    def save(self, path) -> None:
        write_checkpoint(path, self.bundle, self.cfg)

    def load(self, path) -> None:
        vectors, _ = read_checkpoint(path)
        for net, name in zip(self.bundle.all_nets(), ActorCriticBundle.NAMES):
            if vectors[name].shape != net.params.shape:
                raise ValueError(f"checkpoint vector {name} has the wrong length")
            net.params = vectors[name]


def clip_noise(eps: np.ndarray, clip: np.ndarray | float) -> np.ndarray:
    return np.clip(eps, -clip, clip)


def act_explore(agent: Agent, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return agent.act_explore(state, rng)


def smooth_target_action(agent: Agent, next_state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return agent.smooth_target_action(next_state, rng)


def train_step(agent: Agent, buffer: ReplayBuffer, rng: np.random.Generator) -> LossBreakdown | None:
    return agent.train_step(buffer, rng)


# --- config text blocks and checkpoints ---------------------------------------

CHECKPOINT_MAGIC = b"SPIAC-CKPT 1\n"
_CONFIG_END = b"--- params ---\n"


def flatten_config(obj, prefix: str = "") -> dict[str, object]:
    """Dataclass tree to ``{"dotted.path": scalar-or-tuple}``."""
    out: dict[str, object] = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(value):
            out.update(flatten_config(value, key + "."))
        else:
            out[key] = value
    return out


def format_value(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_checkpoint(path, bundle: ActorCriticBundle, cfg: AgentConfig) -> None:
    lines = [f"{k} = {format_value(v)}\n" for k, v in flatten_config(cfg).items()]
    blob = CHECKPOINT_MAGIC + "".join(lines).encode() + _CONFIG_END
    blob += b"".join(serialize_params(n.params) for n in bundle.all_nets())
    with open(path, "wb") as fh:
        fh.write(blob)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Parameter vectors by network name and the raw config key-value block."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint")
    head_end = data.index(_CONFIG_END)
    config = {}
    for line in data[len(CHECKPOINT_MAGIC):head_end].decode().splitlines():
        k, _, v = line.partition("=")
        config[k.strip()] = v.strip()
    offset = head_end + len(_CONFIG_END)
    vectors = {}
    for name in ActorCriticBundle.NAMES:
        vectors[name], offset = deserialize_params(data, offset)
    return vectors, config
