"""Run configuration: OmegaConf structured schema over the config dataclasses.

Run files are flat ``section.field = value`` lines whose values are YAML
scalars or flow mappings. Enum fields take member names::

    iterations = 3
    answer_mode = JUDGE
    rl.group_size = 8
    world.hop_mix = {1: 0.25, 2: 0.375, 3: 0.375}

``.yaml`` files (the snapshot a run directory keeps) load through the same
schema.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .errors import ConfigError
from .evaluation import EvalConfig
from .grpo import GrpoConfig
from .policy import PolicyArch
from .reward import AnswerMode
from .rsft import FilterConfig, SftConfig
from .warmup import WarmupConfig
from .world import DEFAULT_HOP_MIX

YAML_SUFFIXES = (".yaml", ".yml")


@dataclass
class WorldConfig:
    seed: int = 0
    n_entities: int = 200
    n_relations: int = 8
    train_questions: int = 600
    eval_id_questions: int = 150
    eval_ood_questions: int = 100
    hop_mix: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_HOP_MIX))

    def __post_init__(self) -> None:
        if self.train_questions < 1:
            raise ConfigError("world.train_questions", "must be >= 1")
        if self.eval_id_questions < 1 or self.eval_ood_questions < 1:
            raise ConfigError("world", "evaluation sets must be non-empty")


@dataclass
class PolicyConfig:
    context_window: int = 32
    hidden_size: int = 16

    def __post_init__(self) -> None:
        if self.context_window < 2:
            raise ConfigError("policy.context_window", "must be >= 2")
        if self.hidden_size < 1:
            raise ConfigError("policy.hidden_size", "must be >= 1")

    def arch(self, vocab_size: int) -> PolicyArch:
        return PolicyArch(self.context_window, self.hidden_size, vocab_size)


@dataclass
class EvolveConfig:
    iterations: int = 3
    seed: int = 0
    shard_seed: int = 0
    answer_mode: AnswerMode = AnswerMode.JUDGE
    run_dir: str = "run"
    progress: bool = False
    world: WorldConfig = field(default_factory=WorldConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    warmup: WarmupConfig = field(default_factory=WarmupConfig)
    rl: GrpoConfig = field(default_factory=GrpoConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    sft: SftConfig = field(default_factory=SftConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations", "must be >= 1")


SECTIONS = ("world", "policy", "warmup", "rl", "filter", "sft", "eval")


def _reason(exc: Exception) -> str:
    lines = str(exc).splitlines()
    return lines[0] if lines else type(exc).__name__


def _scalar(key: str, text: str) -> Any:
    try:
        return OmegaConf.to_container(OmegaConf.from_dotlist([f"value={text}"]))["value"]
    except (OmegaConfBaseException, yaml.YAMLError) as exc:
        raise ConfigError(key, _reason(exc)) from exc


def _assign(conf: DictConfig, key: str, value: Any, label: str | None = None) -> None:
    # replace, never merge: a hop mix override drops the default hop counts
    try:
        OmegaConf.update(conf, key, value, merge=False)
    except OmegaConfBaseException as exc:
        raise ConfigError(label or key, _reason(exc)) from exc


def _instantiate(conf: DictConfig, source: str) -> EvolveConfig:
    try:
        return OmegaConf.to_object(conf)
    except OmegaConfBaseException as exc:
        raise ConfigError(source, _reason(exc)) from exc


def parse_hop_mix(key: str, text: str) -> dict[int, float]:
    """Hop mix from a flow mapping such as ``{1: 0.5, 2: 0.5}``."""
    conf = OmegaConf.structured(WorldConfig)
    _assign(conf, "hop_mix", _scalar(key, text), label=key)
    return OmegaConf.to_container(conf.hop_mix)


def parse_config(text: str) -> EvolveConfig:
    conf = OmegaConf.structured(EvolveConfig)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {number}", "expected key = value")
        _assign(conf, key, _scalar(key, value))
    return _instantiate(conf, "config")


def _leaves(data: Mapping[str, Any]) -> list[tuple[str, Any]]:
    leaves = []
    for key, value in data.items():
        if key in SECTIONS and isinstance(value, Mapping):
            leaves += [(f"{key}.{name}", item) for name, item in value.items()]
        else:
            leaves.append((str(key), value))
    return leaves


def load_config(path: str | Path) -> EvolveConfig:
    path = Path(path)
    try:
        if path.suffix not in YAML_SUFFIXES:
            return parse_config(path.read_text(encoding="utf-8"))
        loaded = OmegaConf.to_container(OmegaConf.load(path))
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or "unreadable") from exc
    except (OmegaConfBaseException, yaml.YAMLError) as exc:
        raise ConfigError(str(path), _reason(exc)) from exc
    if not isinstance(loaded, Mapping):
        raise ConfigError(str(path), "expected a mapping")

    conf = OmegaConf.structured(EvolveConfig)
    for key, value in _leaves(loaded):
        _assign(conf, key, value)
    return _instantiate(conf, str(path))


def dump_config(config: EvolveConfig) -> str:
    return OmegaConf.to_yaml(OmegaConf.structured(config))


def save_config(config: EvolveConfig, path: str | Path) -> None:
    OmegaConf.save(OmegaConf.structured(config), Path(path))
