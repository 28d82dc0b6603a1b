"""Hybrid reward: the format reward gates the answer reward."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum

from .errors import FormatError
from .grammar import parse_rollout
from .scoring import f1_score, judge_answer, recall_reward


class AnswerMode(Enum):
    JUDGE = "judge"
    F1 = "f1"
    RECALL = "recall"


@dataclass(frozen=True)
class RewardBreakdown:
    format_reward: float
    answer_reward: float
    total: float
    mode: AnswerMode
    answer_evaluated: bool

    def to_dict(self) -> dict:
        return {
            "format_reward": self.format_reward,
            "answer_reward": self.answer_reward,
            "total": self.total,
            "mode": self.mode.value,
            "answer_evaluated": self.answer_evaluated,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> RewardBreakdown:
        return cls(
            format_reward=float(data["format_reward"]),
            answer_reward=float(data["answer_reward"]),
            total=float(data["total"]),
            mode=AnswerMode(data["mode"]),
            answer_evaluated=bool(data["answer_evaluated"]),
        )


def score_answer(
    pred: str, gold: str, mode: AnswerMode, entities: Iterable[str] = ()
) -> float:
    if mode is AnswerMode.JUDGE:
        return judge_answer(pred, gold, entities)
    if mode is AnswerMode.F1:
        return f1_score(pred, gold)
    return recall_reward(pred, gold)


def hybrid_reward(
    text: str, gold: str, mode: AnswerMode, entities: Iterable[str] = ()
) -> RewardBreakdown:
    try:
        rollout = parse_rollout(text)
    except FormatError:
        return RewardBreakdown(0.0, 0.0, 0.0, mode, answer_evaluated=False)

    answer = score_answer(rollout.answer_text() or "", gold, mode, entities)
    return RewardBreakdown(1.0, answer, 0.5 * (1.0 + answer), mode, answer_evaluated=True)
