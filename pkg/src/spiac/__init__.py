"""Twin-critic actor-critic trained by stochastic proximal iteration, in plain numpy."""

from .agent import Agent, AgentConfig, ReplayBuffer, Transition, td3_baseline_config
from .envs import make_env
from .harness import RunConfig, run_training
from .spi import OptimizerMode, SpiConfig

__all__ = [
    "Agent",
    "AgentConfig",
    "OptimizerMode",
    "ReplayBuffer",
    "RunConfig",
    "SpiConfig",
    "Transition",
    "make_env",
    "run_training",
    "td3_baseline_config",
]
