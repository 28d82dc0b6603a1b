"""Desk-scale laboratory for self-evolving search agents."""

__version__ = "0.1.0"

from .config import EvolveConfig, load_config
from .errors import FormatError, LabError
from .grammar import Rollout, Segment, check_format, parse_rollout, render_rollout
from .orchestrator import evolve, rl_only
from .policy import PolicyArch, PolicyParams, Vocabulary
from .reward import AnswerMode, hybrid_reward
from .world import KnowledgeGraph, generate_questions, generate_world, web_search

__all__ = [
    "AnswerMode",
    "EvolveConfig",
    "FormatError",
    "KnowledgeGraph",
    "LabError",
    "PolicyArch",
    "PolicyParams",
    "Rollout",
    "Segment",
    "Vocabulary",
    "check_format",
    "evolve",
    "generate_questions",
    "generate_world",
    "hybrid_reward",
    "load_config",
    "parse_rollout",
    "render_rollout",
    "rl_only",
    "web_search",
]
