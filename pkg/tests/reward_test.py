from __future__ import annotations

import numpy as np

from search_agent_lab.reward import AnswerMode, RewardBreakdown, hybrid_reward, score_answer
from search_agent_lab.scoring import f1_score

GOLD = "Tamur Vobeka"


def rollout_text(answer: str, valid: bool) -> str:
    text = f"<think>i know</think><answer>{answer}</answer>"
    return text if valid else text + " trailing"


def test_judge_examples() -> None:
    assert hybrid_reward(rollout_text(GOLD, True), GOLD, AnswerMode.JUDGE).total == 1.0
    assert hybrid_reward(rollout_text("Lesipa", True), GOLD, AnswerMode.JUDGE).total == 0.5
    bad = hybrid_reward(rollout_text(GOLD, False), GOLD, AnswerMode.JUDGE)
    assert bad.total == 0.0
    assert not bad.answer_evaluated


def test_f1_mode() -> None:
    reward = hybrid_reward(rollout_text("barack obama", True), "obama", AnswerMode.F1)
    assert reward.answer_reward == 2 / 3
    assert reward.total == 0.5 * (1 + 2 / 3)


def test_reward_lattice() -> None:
    for mode in (AnswerMode.JUDGE, AnswerMode.RECALL):
        totals = {
            hybrid_reward(rollout_text(answer, valid), GOLD, mode).total
            for valid in (False, True)
            for answer in ("Lesipa", GOLD)
        }
        assert totals == {0.0, 0.5, 1.0}


def test_f1_monotone() -> None:
    answers = ["x", "tamur x y z", "tamur x", "tamur", "tamur vobeka"]
    rng = np.random.default_rng(0)
    answers += [" ".join(rng.choice(["tamur", "vobeka", "x", "y"], size=3)) for _ in range(20)]
    pairs = sorted(
        (f1_score(a, GOLD), hybrid_reward(rollout_text(a, True), GOLD, AnswerMode.F1).total)
        for a in answers
    )
    for (f1, total), (_, next_total) in zip(pairs, pairs[1:]):
        assert total == 0.5 * (1 + f1)
        assert total <= next_total


def test_breakdown_dict() -> None:
    reward = hybrid_reward(rollout_text(GOLD, True), GOLD, AnswerMode.RECALL)
    assert RewardBreakdown.from_dict(reward.to_dict()) == reward
    assert score_answer("tamur", GOLD, AnswerMode.RECALL) == 0.0
