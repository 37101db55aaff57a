"""Training driver, evaluation, curve files, aggregation and sample-efficiency reports."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agent import Agent, AgentConfig, ReplayBuffer, Transition, flatten_config, format_value
from .envs import ENVS, Env, make_env

log = logging.getLogger(__name__)

CURVE_HEADER = ["timestep", "mean_return", "std_return", "smoothed_return"]
REPORT_HEADER = ["config", "threshold", "mean_timesteps", "reach_rate"]
CURVE_GLOB = "seed_*.csv"


class ConfigError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    env_id: str = "pendulum"
    agent: AgentConfig = field(default_factory=AgentConfig)
    total_steps: int = 20_000
    eval_every: int = 1000
    eval_episodes: int = 10
    seeds: tuple[int, ...] = (0,)
    smoothing_alpha: float = 0.6
    output_dir: str = "runs"

    def validate(self) -> None:
        if self.env_id not in ENVS:
            raise ConfigError(f"unknown env id {self.env_id!r}; choose from {sorted(ENVS)}")
        if not self.total_steps >= self.eval_every >= 1:
            raise ConfigError("need total_steps >= eval_every >= 1")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not 0.0 < self.smoothing_alpha <= 1.0:
            raise ConfigError("smoothing_alpha must lie in (0, 1]")


@dataclass
class CurvePoint:
    timestep: int
    mean_return: float
    std_return: float
    smoothed_return: float


# --- flat key-value configuration ------------------------------------------------

def _coerce(raw: str, tp) -> object:
    origin = typing.get_origin(tp)
    if origin is tuple:
        (item_tp, *_) = typing.get_args(tp)
        return tuple(_coerce(p.strip(), item_tp) for p in raw.split(",") if p.strip())
    if tp is bool:
        low = raw.lower()
        if low not in ("true", "false", "1", "0"):
            raise ConfigError(f"not a boolean: {raw!r}")
        return low in ("true", "1")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    if tp is str:
        return raw
    raise ConfigError(f"unsupported field type {tp!r}")


def _set_path(obj, path: list[str], raw: str, full_key: str):
    """Return a copy of dataclass ``obj`` with the dotted ``path`` set from ``raw``."""
    hints = typing.get_type_hints(type(obj))
    name = path[0]
    if name not in hints or name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {full_key!r}")
    current = getattr(obj, name)
    if len(path) > 1:
        if not dataclasses.is_dataclass(current):
            raise ConfigError(f"unknown config key {full_key!r}")
        value = _set_path(current, path[1:], raw, full_key)
    else:
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"config key {full_key!r} names a section, not a value")
        try:
            value = _coerce(raw, hints[name])
        except ValueError as exc:
            raise ConfigError(f"bad value for {full_key!r}: {exc}") from None
    try:
        return dataclasses.replace(obj, **{name: value})
    except ValueError as exc:
        raise ConfigError(f"invalid value for {full_key!r}: {exc}") from None


def apply_overrides(cfg, items: dict[str, str]):
    for key, raw in items.items():
        cfg = _set_path(cfg, key.split("."), raw, key)
    return cfg


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys override earlier ones."""
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        items[key.strip()] = value.strip()
    return items


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return apply_overrides(base or RunConfig(), parse_kv(Path(path).read_text()))


def dump_config(cfg) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in flatten_config(cfg).items())


# --- evaluation and training ---------------------------------------------------------

def eval_seeds(seed: int, n: int) -> list[int]:
    """Start-state seeds for evaluation; fixed per run seed and disjoint from training draws."""
    rng = np.random.default_rng([seed, 0x5EED_E7A1])
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=n)]


def rollout(env: Env, policy, seed: int) -> float:
    """Undiscounted return of one episode under a deterministic ``policy(obs)``."""
    obs = env.reset(seed)
    total = 0.0
    while True:
        res = env.step(policy(obs))
        total += res.reward
        obs = res.next_state
        if res.done or res.truncated:
            return total


def evaluate(policy, env_id: str, seeds: Sequence[int]) -> list[float]:
    env = make_env(env_id)
    return [rollout(env, policy, s) for s in seeds]


@dataclass
class SeedResult:
    seed: int
    curve: list[CurvePoint]
    agent: Agent
    clamped_actions: int


def ema(values: Sequence[float], alpha: float) -> list[float]:
    out = []
    s = None
    for v in values:
        s = v if s is None else alpha * v + (1.0 - alpha) * s
        out.append(s)
    return out


def train_seed(cfg: RunConfig, seed: int, eval_hook=None) -> SeedResult:
    """Collect / store / train for ``cfg.total_steps`` env steps and evaluate periodically.

    Training uses one rng stream seeded by ``seed``; evaluation uses its own env
    instance and fixed start seeds, so it never touches the buffer or that stream.
    """
    env = make_env(cfg.env_id)
    spec = env.spec
    agent = Agent(cfg.agent, spec.obs_dim, spec.act_dim, spec.action_bound, seed)
    buffer = ReplayBuffer(min(cfg.agent.buffer_capacity, cfg.total_steps), spec.obs_dim, spec.act_dim)
    rng = np.random.default_rng(seed)
    starts = eval_seeds(seed, cfg.eval_episodes)
    obs = env.reset(int(rng.integers(0, 2**31 - 1)))
    timesteps, means, stds = [], [], []
    for t in range(cfg.total_steps):
        action = agent.act_explore(obs, rng)
        res = env.step(action)
        # time-limit truncation is stored as non-terminal so bootstrapping continues
        buffer.store(Transition(obs, action, res.reward, res.next_state, res.done))
        obs = res.next_state
        if res.done or res.truncated:
            obs = env.reset(int(rng.integers(0, 2**31 - 1)))
        if t >= cfg.agent.burn_in:
            agent.train_step(buffer, rng)
        if (t + 1) % cfg.eval_every == 0:
            returns = evaluate(agent.act, cfg.env_id, starts)
            timesteps.append(t + 1)
            means.append(float(np.mean(returns)))
            stds.append(float(np.std(returns)))
            log.info("env=%s seed=%d t=%d return=%.3f", cfg.env_id, seed, t + 1, means[-1])
            if eval_hook is not None:
                eval_hook(t + 1, agent, returns)
    smoothed = ema(means, cfg.smoothing_alpha)
    curve = [CurvePoint(*row) for row in zip(timesteps, means, stds, smoothed)]
    return SeedResult(seed, curve, agent, env.stats["clamped_actions"])


def curve_path(out_dir: str | Path, seed: int) -> Path:
    return Path(out_dir) / f"seed_{seed}.csv"


def run_training(cfg: RunConfig) -> list[Path]:
    """Train every seed of ``cfg`` and write one curve CSV (plus a stats file) per seed."""
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    paths = []
    for seed in cfg.seeds:
        try:
            result = train_seed(cfg, seed)
        except FloatingPointError as exc:
            diag = out / f"seed_{seed}.error.txt"
            diag.write_text(f"seed = {seed}\nerror = {exc}\n")
            raise TrainingDiverged(f"seed {seed} diverged: {exc} (see {diag})") from exc
        path = curve_path(out, seed)
        write_curve(path, result.curve)
        stats = result.agent.stats
        (out / f"seed_{seed}.stats.txt").write_text(
            f"train_steps = {stats.train_steps}\n"
            f"min_target_checks = {stats.min_target_checks}\n"
            f"min_target_violations = {stats.min_target_violations}\n"
            f"clamped_actions = {result.clamped_actions}\n")
        paths.append(path)
    return paths


# --- curve files ------------------------------------------------------------

def write_curve(path: str | Path, points: Iterable[CurvePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for p in points:
            w.writerow([p.timestep, repr(p.mean_return), repr(p.std_return), repr(p.smoothed_return)])


def read_curve(path: str | Path) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        points = [CurvePoint(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader]
    for a, b in zip(points, points[1:]):
        if b.timestep <= a.timestep:
            raise ValueError(f"{path}: timesteps not strictly increasing")
    return points


def curve_files(directory: str | Path) -> list[Path]:
    files = sorted(Path(directory).glob(CURVE_GLOB), key=lambda p: _seed_key(p))
    if not files:
        raise FileNotFoundError(f"no {CURVE_GLOB} files in {directory}")
    return files


def _seed_key(p: Path):
    tail = p.stem[len("seed_"):]
    return (0, int(tail), "") if tail.isdigit() else (1, 0, tail)


def aggregate(curves: Sequence[Sequence[CurvePoint]], smoothing_alpha: float = 1.0) -> list[CurvePoint]:
    """Across-seed mean and population std per timestep, then exponential smoothing."""
    if not curves:
        raise ValueError("need at least one curve")
    steps = [p.timestep for p in curves[0]]
    for c in curves[1:]:
        if [p.timestep for p in c] != steps:
            raise AlignmentError("curves do not share the same timesteps")
    table = np.array([[p.mean_return for p in c] for c in curves])
    mean = table.mean(axis=0)
    std = table.std(axis=0)
    smoothed = ema(mean.tolist(), smoothing_alpha)
    return [CurvePoint(t, float(m), float(s), float(sm)) for t, m, s, sm in zip(steps, mean, std, smoothed)]


def aggregate_files(paths: Sequence[str | Path], smoothing_alpha: float = 1.0) -> list[CurvePoint]:
    return aggregate([read_curve(p) for p in paths], smoothing_alpha)


# --- sample-efficiency report ------------------------------------------------------

@dataclass
class ReportRow:
    config: str
    threshold: float
    mean_timesteps: float | None
    reach_rate: float


def timesteps_to_threshold(curve: Sequence[CurvePoint], threshold: float) -> int | None:
    """First timestep whose unsmoothed mean return reaches ``threshold``."""
    for p in curve:
        if p.mean_return >= threshold:
            return p.timestep
    return None


def threshold_report(groups: dict[str, Sequence[Sequence[CurvePoint]]],
                     thresholds: Sequence[float]) -> list[ReportRow]:
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    rows = []
    for name, curves in groups.items():
        for thr in thresholds:
            hits = [timesteps_to_threshold(c, thr) for c in curves]
            reached = [h for h in hits if h is not None]
            mean_t = float(np.mean(reached)) if reached else None
            rows.append(ReportRow(name, thr, mean_t, len(reached) / len(curves)))
    return rows


def write_report(path_or_fh, rows: Sequence[ReportRow]) -> None:
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow([r.config, repr(r.threshold), "" if r.mean_timesteps is None else repr(r.mean_timesteps),
                        repr(r.reach_rate)])

    if hasattr(path_or_fh, "write"):
        emit(path_or_fh)
    else:
        with open(path_or_fh, "w", newline="") as fh:
            emit(fh)


def load_groups(directory: str | Path) -> dict[str, list[list[CurvePoint]]]:
    """Curves grouped by config: the directory itself, or one group per subdirectory."""
    directory = Path(directory)
    if list(directory.glob(CURVE_GLOB)):
        return {directory.name: [read_curve(p) for p in curve_files(directory)]}
    groups = {}
    for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
        if list(sub.glob(CURVE_GLOB)):
            groups[sub.name] = [read_curve(p) for p in curve_files(sub)]
    if not groups:
        raise FileNotFoundError(f"no curve files under {directory}")
    return groups


def relative_thresholds(curves: Sequence[Sequence[CurvePoint]],
                        fractions: Sequence[float] = (1 / 3, 2 / 3)) -> list[float]:
    """Thresholds a fraction of the way from the worst to the best observed eval return.

    For curves that start near zero reward this is the usual "fraction of the
    best return"; it also stays meaningful when every return is negative.
    """
    values = [p.mean_return for c in curves for p in c]
    lo, hi = min(values), max(values)
    return [lo + f * (hi - lo) for f in fractions]


def median_timesteps(curves: Sequence[Sequence[CurvePoint]], threshold: float) -> float:
    """Median first-crossing timestep; seeds that never cross count as infinitely slow."""
    hits = [timesteps_to_threshold(c, threshold) for c in curves]
    return float(np.median([math.inf if h is None else h for h in hits]))


# --- ablation sweep -------------------------------------------------------------

GRID_AXES = {
    "loss_kind": "agent.loss_kind",
    "policy_value": "agent.policy_value",
    "optimizer": "agent.optimizer.variant",
}


@dataclass
class AblationResult:
    cells: dict[str, list[Path]]
    report_path: Path
    invariants_path: Path
    min_target_violations: int


def run_ablation(grid_text: str) -> AblationResult:
    """Cartesian sweep over ``grid.<axis> = v1,v2,...`` lines; other keys configure every cell.

    Recognised axes are ``loss_kind``, ``policy_value`` and ``optimizer``; an
    optional ``report.thresholds`` list fixes the report thresholds, otherwise
    they sit at one and two thirds of the observed return range.
    """
    items = parse_kv(grid_text)
    axes: dict[str, list[str]] = {}
    base: dict[str, str] = {}
    thresholds = None
    for key, value in items.items():
        if key.startswith("grid."):
            axis = key[len("grid."):]
            if axis not in GRID_AXES:
                raise ConfigError(f"unknown grid axis {axis!r}; choose from {sorted(GRID_AXES)}")
            axes[axis] = [v.strip() for v in value.split(",") if v.strip()]
        elif key == "report.thresholds":
            thresholds = sorted(float(v) for v in value.split(","))
        else:
            base[key] = value
    base_cfg = apply_overrides(RunConfig(), base)
    base_cfg.validate()
    root = Path(base_cfg.output_dir)
    names = list(axes)
    cells: dict[str, list[Path]] = {}
    violations = 0
    inv_rows = []
    for combo in itertools.product(*(axes[n] for n in names)):
        cell = "-".join(combo) if combo else "base"
        overrides = {GRID_AXES[n]: v for n, v in zip(names, combo)}
        overrides["output_dir"] = str(root / cell)
        cfg = apply_overrides(base_cfg, overrides)
        log.info("ablation cell %s", cell)
        cells[cell] = run_training(cfg)
        for seed in cfg.seeds:
            stats = parse_kv((root / cell / f"seed_{seed}.stats.txt").read_text())
            v = int(stats["min_target_violations"])
            violations += v
            inv_rows.append([cell, seed, stats["min_target_checks"], v])
    groups = {c: [read_curve(p) for p in paths] for c, paths in cells.items()}
    if thresholds is None:
        thresholds = relative_thresholds([c for g in groups.values() for c in g])
    report_path = root / "report.csv"
    write_report(report_path, threshold_report(groups, thresholds))
    invariants_path = root / "invariants.csv"
    with open(invariants_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "seed", "min_target_checks", "min_target_violations"])
        w.writerows(inv_rows)
    return AblationResult(cells, report_path, invariants_path, violations)
