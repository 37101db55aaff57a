"""Acceptance gate: one test per criterion, each leaving a PASS/FAIL line in the summary.

The learning criteria train real agents from the shipped configs and take
tens of minutes on one core; deselect them with ``-m "not slow"``.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from spiac.agent import Agent, AgentConfig, ReplayBuffer, Transition
from spiac.envs import lqr_optimal_return, make_env
from spiac.harness import (eval_seeds, load_config, median_timesteps, read_curve, relative_thresholds,
                           run_ablation, run_training, train_seed)
from spiac.losses import Batch, combined_batch_loss
from spiac.mlp import IDENTITY, TANH, finite_difference_check, mlp_init
from spiac.spi import SGD, SPI, OptimizerMode, SpiConfig, damped_prox_iterate, hj_gradient, prox_abs, \
    prox_quadratic, spi_step

from conftest import record

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_gradient_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_net = 0.0
    for k in range(100):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 6))] + [int(rng.integers(2, 9)) for _ in range(depth)] + \
                [int(rng.integers(1, 4))]
        act = TANH if k % 2 else IDENTITY
        net = mlp_init(sizes, act, seed=k, bound=rng.uniform(0.5, 3.0, size=sizes[-1]))
        net.params += 0.2 * rng.normal(size=net.num_params)
        worst_net = max(worst_net, finite_difference_check(net, rng.normal(size=sizes[0]), 1e-6))

    policy = mlp_init([1, 8, 8, 1], TANH, seed=1, bound=2.0)
    nets = [policy] + [mlp_init([2, 8, 8, 1], IDENTITY, seed=s) for s in range(2, 6)]
    for net in nets:
        net.params += 0.3 * rng.normal(size=net.num_params)
    batch = Batch(rng.normal(size=(4, 1)), rng.uniform(-2, 2, size=(4, 1)), rng.normal(size=4),
                  rng.normal(size=(4, 1)), np.array([False, True, False, False]), rng.uniform(-2, 2, size=(4, 1)))

    def total():
        return combined_batch_loss(batch, *nets, gamma=0.99, beta=0.5).breakdown.total

    grads = combined_batch_loss(batch, *nets, gamma=0.99, beta=0.5).grads
    worst_loss = 0.0
    h = 1e-6
    for net, g in zip(nets[:3], grads):
        base = net.params.copy()
        numeric = np.empty_like(base)
        for i in range(base.size):
            net.params = base.copy()
            net.params[i] += h
            up = total()
            net.params[i] -= 2 * h
            numeric[i] = (up - total()) / (2 * h)
        net.params = base
        worst_loss = max(worst_loss, float(np.max(np.abs(g - numeric)) / np.max(np.abs(numeric))))
    elapsed = time.perf_counter() - start
    ok = worst_net < 1e-5 and worst_loss < 1e-4 and elapsed < 10.0
    record("gradient exactness", ok,
           f"net fd err {worst_net:.2e} (<1e-5), combined loss err {worst_loss:.2e} (<1e-4), {elapsed:.1f}s (<10s)")
    assert ok


def test_proximal_suite():
    start = time.perf_counter()
    closed = max(abs(prox_quadratic(y, lam, a) - y / (1 + lam * a))
                 for y, lam, a in [(2.0, 1.0, 1.0), (-3.5, 0.2, 4.0), (0.7, 5.0, 0.3), (1e3, 1e-3, 7.0)])
    closed = max(closed, max(abs(prox_abs(y, lam) - np.sign(y) * max(abs(y) - lam, 0.0))
                             for y, lam in [(2.0, 1.0), (0.5, 1.0), (-2.0, 1.0), (-0.3, 0.1)]))
    fixed = prox_quadratic(0.0, 0.7, 2.0) == 0.0 and prox_abs(0.0, 0.7) == 0.0
    rng = np.random.default_rng(0)
    firm = True
    for prox in (lambda v: prox_quadratic(v, 0.8, 1.3), lambda v: prox_abs(v, 0.8)):
        for x, y in rng.normal(scale=5.0, size=(1000, 2)):
            d = prox(x) - prox(y)
            firm &= d * d <= (x - y) * d + 1e-12
    xs = damped_prox_iterate(1.0, lambda v: prox_quadratic(v, 1.0, 1.0), 0.5, 100)
    first = next((k for k, x in enumerate(xs) if abs(x) < 1e-6), None)
    hj_err = 0.0
    for x, t in [(2.0, 1.0), (-1.3, 0.4), (0.6, 3.0)]:
        def u(v):
            p = prox_quadratic(v, t, 1.0)
            return 0.5 * p * p + (v - p) ** 2 / (2 * t)
        numeric = (u(x + 1e-5) - u(x - 1e-5)) / 2e-5
        hj_err = max(hj_err, abs(hj_gradient(x, t, lambda v: prox_quadratic(v, t, 1.0)) - numeric))
    elapsed = time.perf_counter() - start
    ok = closed <= 1e-12 and fixed and firm and first is not None and hj_err < 1e-6 and elapsed < 5.0
    record("proximal suite", ok,
           f"closed-form err {closed:.1e}, fixed points {fixed}, firm non-expansion {firm}, "
           f"|x|<1e-6 at step {first}, hj err {hj_err:.1e}, {elapsed:.2f}s (<5s)")
    assert ok


def test_degenerate_equivalence():
    start = time.perf_counter()
    spi = SpiConfig(prox_strength=0.0, n_prox=1, tau=0.005, learning_rate=3e-4)
    agents = [Agent(AgentConfig(hidden_sizes=(16, 16), batch_size=32, burn_in=0, spi=spi,
                                optimizer=OptimizerMode(v)), 3, 1, 2.0, seed=11) for v in (SPI, SGD)]
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(500, 3, 1)
    for _ in range(500):
        buf.store(Transition(rng.normal(size=3), rng.uniform(-2, 2, size=1), float(rng.normal()),
                             rng.normal(size=3), bool(rng.random() < 0.05)))
    streams = [np.random.default_rng(5), np.random.default_rng(5)]
    worst = 0.0
    for _ in range(100):
        for agent, stream in zip(agents, streams):
            agent.train_step(buf, stream)
        for a, b in zip(agents[0].bundle.all_nets(), agents[1].bundle.all_nets()):
            worst = max(worst, float(np.max(np.abs(a.params - b.params))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 30.0
    record("degenerate equivalence", ok, f"max |SPI - SGD| over 100 steps {worst:.1e} (<=1e-12), {elapsed:.1f}s (<30s)")
    assert ok


def test_inner_loop_prox_convergence():
    theta_target = 1.3

    def loss(ps):
        return 0.5 * float(ps[0] @ ps[0]), [ps[0].copy()]

    cfg = SpiConfig(prox_strength=1.0, tau=0.5, n_prox=50, learning_rate=0.1)
    fast, target = spi_step([np.array([theta_target])], [np.array([theta_target])], loss, cfg)
    expected = prox_quadratic(theta_target, 1.0, 1.0)
    err = abs(fast[0][0] - expected)
    ok = err < 1e-4 and abs(target[0][0] - 0.5 * (fast[0][0] + theta_target)) < 1e-15
    record("inner-loop prox convergence", ok, f"|fast - prox| after 50 steps {err:.1e} (<1e-4)")
    assert ok


@pytest.mark.slow
def test_lqr_optimality_gap(tmp_path):
    cfg = load_config(CONFIGS / "lqr.cfg")
    env = make_env("lqr")
    ratios = []
    for seed in range(5):
        result = train_seed(cfg, seed)
        learned = result.curve[-1].mean_return
        optimal = float(np.mean([lqr_optimal_return(env.reset(s)) for s in eval_seeds(seed, cfg.eval_episodes)]))
        ratios.append(optimal / learned)
    passed = sum(r >= 0.9 for r in ratios)
    ok = passed >= 3
    record("LQR optimality gap", ok,
           f"optimal/learned return per seed {[round(r, 3) for r in ratios]}; {passed}/5 seeds >= 0.9 (need 3)")
    assert ok


@pytest.mark.slow
def test_pendulum_sample_efficiency(tmp_path):
    curves = {}
    for name in ("baseline", "spi"):
        cfg = load_config(CONFIGS / f"pendulum_{name}.cfg")
        cfg.output_dir = str(tmp_path / name)
        cfg.seeds = tuple(range(5))
        curves[name] = [read_curve(p) for p in run_training(cfg)]
    (threshold,) = relative_thresholds(curves["baseline"], (2 / 3,))
    med = {k: median_timesteps(v, threshold) for k, v in curves.items()}
    ok = med["spi"] <= med["baseline"]
    record("pendulum sample efficiency", ok,
           f"threshold {threshold:.1f}; median timesteps SPI {med['spi']:.0f} vs baseline {med['baseline']:.0f}")
    assert ok


@pytest.mark.slow
def test_ablation_grid(tmp_path):
    grid = (CONFIGS / "ablate_pendulum.grid").read_text() + f"\noutput_dir = {tmp_path}\n"
    result = run_ablation(grid)
    lines = result.report_path.read_text().splitlines()
    rows = [line.split(",") for line in lines[1:]]
    cells = {r[0] for r in rows}
    expected = {f"{a}-{b}" for a in ("huber", "mse") for b in ("avg_targets", "single_target_q1")}
    well_formed = (lines[0] == "config,threshold,mean_timesteps,reach_rate" and cells == expected
                   and all(len(r) == 4 and 0.0 <= float(r[3]) <= 1.0 for r in rows))
    seeds = {c: len(p) for c, p in result.cells.items()}
    ok = well_formed and all(n == 3 for n in seeds.values()) and result.min_target_violations == 0
    record("ablation harness", ok,
           f"{len(cells)} cells x {sorted(set(seeds.values()))} seeds, report well-formed {well_formed}, "
           f"min-target violations {result.min_target_violations}")
    assert ok


def test_determinism(tmp_path):
    cfg = load_config(CONFIGS / "pendulum_spi.cfg")
    cfg.total_steps = 2000
    cfg.eval_every = 1000
    cfg.seeds = (0, 1)
    blobs = []
    for run in ("a", "b"):
        cfg.output_dir = str(tmp_path / run)
        blobs.append([p.read_bytes() for p in run_training(cfg)])
    ok = blobs[0] == blobs[1]
    record("determinism", ok, f"{len(blobs[0])} curve CSVs byte-identical across two runs: {ok}")
    assert ok
