import dataclasses

import numpy as np
import pytest

from search_agent_lab.errors import ConfigError, EmptyData
from search_agent_lab.evaluation import EvalConfig, evaluate
from search_agent_lab.grammar import SegmentKind, check_format, count_tool_calls, render_rollout
from search_agent_lab.policy import PolicyArch, PolicyParams, Vocabulary
from search_agent_lab.rsft import mean_sft_loss
from search_agent_lab.warmup import (
    ANSWER_THOUGHT,
    CALL_THOUGHT,
    WarmupConfig,
    build_base_policy,
    format_demo,
    format_demos,
)
from search_agent_lab.world import Split, generate_questions, generate_world

CONFIG = WarmupConfig(top_k=2, epochs=2, batch_size=4)


@pytest.fixture(scope="module")
def chain_questions(tiny_world):
    return generate_questions(tiny_world, {1: 0.5, 2: 0.5}, 6, Split.TRAIN, 1)


def test_demos_walk_the_relation_chain(tiny_world, vocab, chain_questions):
    demos = format_demos(chain_questions, tiny_world, vocab, CONFIG)
    assert len(demos) == len(chain_questions)
    for demo, question in zip(demos, chain_questions):
        assert check_format(render_rollout(demo)) == 1.0
        assert count_tool_calls(demo) == question.hop_count
        assert demo.answer_text() == question.gold_answer
        queries = [s.queries[0] for s in demo.segments if s.kind is SegmentKind.TOOL_CALL]
        expected = [f"{e} {r}" for e, r in zip(question.path, question.relations)]
        assert queries == expected
        thoughts = [s.payload for s in demo.segments if s.kind is SegmentKind.THOUGHT]
        assert thoughts == [CALL_THOUGHT] * question.hop_count + [ANSWER_THOUGHT]
        assert len(demo.searches_left) == len(demo.token_ids)


def test_demos_never_read_the_gold_answer(tiny_world, vocab, chain_questions):
    for question in chain_questions:
        blinded = dataclasses.replace(question, gold_answer="nobody")
        assert format_demo(blinded, tiny_world, vocab, CONFIG) == format_demo(
            question, tiny_world, vocab, CONFIG
        )


def test_search_budget_cuts_the_chain(tiny_world, vocab, chain_questions):
    question = next(q for q in chain_questions if q.hop_count == 2)
    one = format_demo(question, tiny_world, vocab, WarmupConfig(max_searches=1, top_k=2))
    assert count_tool_calls(one) == 1
    assert one.answer_text() == question.path[1]

    none = format_demo(question, tiny_world, vocab, WarmupConfig(max_searches=0))
    assert count_tool_calls(none) == 0
    assert none.answer_text() == question.anchor


def test_base_policy_lowers_demo_loss(tiny_world, vocab, questions):
    arch = PolicyArch(4, 4, len(vocab))
    params = build_base_policy(tiny_world, vocab, questions, arch, CONFIG, seed=3)
    demos = format_demos(questions, tiny_world, vocab, CONFIG)
    start = PolicyParams.initialize(arch, 3, CONFIG.init_scale)
    assert mean_sft_loss(params, demos) < mean_sft_loss(start, demos)


def test_base_policy_answers_from_search_results():
    kg = generate_world(7, 30, 3)
    vocab = Vocabulary.from_world(kg)
    questions = generate_questions(kg, {1: 1.0}, 16, Split.TRAIN, 2)
    arch = PolicyArch(24, 16, len(vocab))
    config = WarmupConfig(top_k=2, epochs=60, batch_size=4)
    eval_config = EvalConfig(top_k=2, max_tokens=40, workers=1)

    start = PolicyParams.initialize(arch, 5, config.init_scale)
    base = build_base_policy(kg, vocab, questions, arch, config, seed=5)
    before = evaluate(start, questions, kg, vocab, eval_config).records
    after = evaluate(base, questions, kg, vocab, eval_config).records

    assert np.mean([r.format_valid for r in after]) >= 0.5
    assert np.mean([r.score for r in after]) > np.mean([r.score for r in before])
    assert any(r.tool_calls > 0 and r.score == 1.0 for r in after)


def test_base_policy_errors(tiny_world, vocab, questions):
    with pytest.raises(EmptyData):
        build_base_policy(tiny_world, vocab, [], PolicyArch(4, 4, len(vocab)), CONFIG, 0)
    with pytest.raises(ConfigError):
        build_base_policy(tiny_world, vocab, questions, PolicyArch(4, 4, len(vocab) + 1), CONFIG, 0)
    with pytest.raises(ConfigError):
        WarmupConfig(init_scale=0.0)
    with pytest.raises(ConfigError):
        WarmupConfig(top_k=0)
