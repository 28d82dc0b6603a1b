"""Tool-use warm-up: a base policy that already speaks the rollout template.

Demonstrations walk each training question's relation chain one search at a
time. A query names the current entity and the next relation; the object of
the matching triple in the returned results becomes the next entity, and the
last entity reached is the answer. The gold answer field is never read, so a
demo stops early when the results do not contain the hop.

Thoughts are single fixed words and every call carries one query, so a
copied entity sits at the same distance from the token that copies it in
every demo of the same hop count.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

from .errors import ConfigError, EmptyData
from .grammar import Rollout, Segment
from .policy import (
    PolicyArch,
    PolicyParams,
    PolicySnapshot,
    SnapshotRole,
    Vocabulary,
    encode_rollout,
)
from .rsft import SftConfig, mean_sft_loss, sft_train
from .world import DEFAULT_TOP_K, KnowledgeGraph, Question, SearchResult, SearchSession

logger = logging.getLogger(__name__)

CALL_THOUGHT = "search"
ANSWER_THOUGHT = "answer"


@dataclass
class WarmupConfig:
    init_scale: float = 0.1
    learning_rate: float = 0.5
    batch_size: int = 16
    epochs: int = 20
    max_searches: int = 10
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self) -> None:
        if self.init_scale <= 0:
            raise ConfigError("warmup.init_scale", "must be positive")
        if self.max_searches < 0:
            raise ConfigError("warmup.max_searches", "must be >= 0")
        if self.top_k < 1:
            raise ConfigError("warmup.top_k", "must be >= 1")

    def sft(self) -> SftConfig:
        return SftConfig(self.learning_rate, self.batch_size, self.epochs)


def next_hop(results: Sequence[SearchResult], entity: str, relation: str) -> str | None:
    """Object of the ``entity relation ?`` triple among the results, if any."""
    for result in results:
        words = result.snippet.split()
        if len(words) == 3 and words[0] == entity and words[1] == relation:
            return words[2]
    return None


def format_demo(
    question: Question, kg: KnowledgeGraph, vocab: Vocabulary, config: WarmupConfig
) -> Rollout:
    session = SearchSession(kg, config.top_k, config.max_searches)
    segments: list[Segment] = []
    entity = question.anchor

    for relation in question.relations[: config.max_searches]:
        query = f"{entity} {relation}"
        results, notice = session.execute([query])
        segments += [
            Segment.thought(CALL_THOUGHT),
            Segment.tool_call([query]),
            Segment.tool_response(results, notice),
        ]
        found = next_hop(results, entity, relation)
        if found is None:
            break
        entity = found

    segments += [Segment.thought(ANSWER_THOUGHT), Segment.answer(entity)]
    tokens, mask, left = encode_rollout(vocab, segments, config.max_searches)
    return Rollout(
        question_id=question.id,
        question_text=question.text,
        segments=tuple(segments),
        prompt_ids=tuple(vocab.encode_words(question.text)),
        token_ids=tuple(tokens),
        action_mask=tuple(mask),
        searches_left=tuple(left),
    )


def format_demos(
    questions: Sequence[Question], kg: KnowledgeGraph, vocab: Vocabulary, config: WarmupConfig
) -> list[Rollout]:
    return [format_demo(question, kg, vocab, config) for question in questions]


def build_base_policy(
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    questions: Sequence[Question],
    arch: PolicyArch,
    config: WarmupConfig,
    seed: int,
) -> PolicyParams:
    if not questions:
        raise EmptyData("warm-up questions")
    if arch.vocab_size != len(vocab):
        raise ConfigError("policy.vocab_size", f"{arch.vocab_size} != vocabulary size {len(vocab)}")

    demos = format_demos(questions, kg, vocab, config)
    start = PolicySnapshot.capture(
        PolicyParams.initialize(arch, seed, config.init_scale), SnapshotRole.BASE
    )
    params = sft_train(start, demos, config.sft(), seed)
    logger.info(
        "Warm-up on %d demos: loss %.4f -> %.4f",
        len(demos),
        mean_sft_loss(start.params, demos),
        mean_sft_loss(params, demos),
    )
    return params
