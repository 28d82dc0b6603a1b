import dataclasses
from pathlib import Path

import pytest

from search_agent_lab.config import (
    EvolveConfig,
    dump_config,
    load_config,
    parse_config,
    parse_hop_mix,
    save_config,
)
from search_agent_lab.errors import ConfigError
from search_agent_lab.grpo import AdvantageScope
from search_agent_lab.reward import AnswerMode

DESK_CONF = Path(__file__).resolve().parents[1] / "configs" / "desk.conf"


def test_snapshot_round_trip(tmp_path):
    config = EvolveConfig()
    save_config(config, tmp_path / "config.yaml")
    assert load_config(tmp_path / "config.yaml") == config
    assert "answer_mode: JUDGE" in dump_config(config)


def test_desk_config_loads(tmp_path):
    config = load_config(DESK_CONF)
    assert config.iterations == 3
    assert config.world.hop_mix == {1: 0.25, 2: 0.375, 3: 0.375}
    assert config.policy.context_window == 64
    assert config.rl.group_size == 8
    assert config.rl.top_k == 2
    assert config.filter.delta == 0.7
    assert config.answer_mode is AnswerMode.JUDGE
    save_config(config, tmp_path / "desk.yaml")
    assert load_config(tmp_path / "desk.yaml") == config


def test_comments_and_blank_lines():
    config = parse_config("# header\n\niterations = 2  # trailing\n  rl.clip=0.1\n")
    assert config.iterations == 2
    assert config.rl.clip == 0.1


def test_coercion():
    config = parse_config(
        "progress = yes\nanswer_mode = F1\nrl.advantage_scope = BATCH\n"
        "eval.judge_mode = RECALL\nrl.learning_rate = 1\n"
    )
    assert config.progress is True
    assert config.answer_mode is AnswerMode.F1
    assert config.rl.advantage_scope is AdvantageScope.BATCH
    assert config.eval.judge_mode is AnswerMode.RECALL
    assert config.rl.learning_rate == 1.0


def test_hop_mix_override_replaces_the_default():
    config = parse_config("world.hop_mix = {1: 1.0}")
    assert config.world.hop_mix == {1: 1.0}
    assert parse_hop_mix("--mix", "{2: 0.5, 3: 0.5}") == {2: 0.5, 3: 0.5}
    with pytest.raises(ConfigError) as excinfo:
        parse_hop_mix("--mix", "1:1")
    assert excinfo.value.key == "--mix"


@pytest.mark.parametrize(
    "text,key",
    [
        ("rl.gruop_size = 4", "rl.gruop_size"),
        ("optimizer.lr = 1", "optimizer.lr"),
        ("iterations = three", "iterations"),
        ("progress = maybe", "progress"),
        ("answer_mode = exact", "answer_mode"),
        ("world.hop_mix = 1-0.5", "world.hop_mix"),
        ("rl = 3", "rl"),
        ("just words", "line 1"),
    ],
)
def test_rejected_lines(text, key):
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    assert excinfo.value.key == key


def test_validation_runs_on_parsed_values():
    with pytest.raises(ConfigError):
        parse_config("rl.group_size = 1")
    with pytest.raises(ConfigError):
        parse_config("iterations = 0")


def test_yaml_snapshot_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("iterations: 2\nrl:\n  gruop_size: 4\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.key == "rl.gruop_size"

    path.write_text("iterations: 2\nrl:\n  group_size: 4\n", encoding="utf-8")
    expected = EvolveConfig(iterations=2)
    expected = dataclasses.replace(expected, rl=dataclasses.replace(expected.rl, group_size=4))
    assert load_config(path) == expected


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.conf")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
