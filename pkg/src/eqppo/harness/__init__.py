"""Training harness: configuration, agents, loop, evaluation, and CLI."""

from .agents import BPAgent, EPAgent, agent_from_bundle, make_agent
from .checkpoint import load_bundle, load_net, save_bundle, save_net
from .config import TrainerConfig
from .trainer import Trainer, read_metrics, write_metrics

__all__ = [
    "BPAgent", "EPAgent", "Trainer", "TrainerConfig", "agent_from_bundle",
    "load_bundle", "load_net", "make_agent", "read_metrics", "save_bundle",
    "save_net", "write_metrics",
]
