from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from search_agent_lab.grammar import Rollout
from search_agent_lab.policy import (
    CALL_OPEN_ID,
    SPECIAL_TOKENS,
    PolicyArch,
    PolicyParams,
    Vocabulary,
    sequence_log_probs,
)

FD_STEP = 1e-5


def small_vocab(words: int = 6) -> Vocabulary:
    return Vocabulary(SPECIAL_TOKENS + tuple(f"w{i}" for i in range(words)))


def small_arch() -> PolicyArch:
    # 426 parameters
    return PolicyArch(context_window=3, hidden_size=4, vocab_size=len(small_vocab()))


def random_token_rollout(
    rng: np.random.Generator,
    vocab_size: int,
    length: int = 12,
    prompt: int = 2,
    observation: tuple[int, int] | None = None,
    with_budget: bool = True,
) -> Rollout:
    """Random tokens and mask; ``observation`` marks a [start, stop) environment span."""
    tokens = rng.integers(vocab_size, size=length)
    mask = np.ones(length, dtype=bool)
    if observation is not None:
        mask[observation[0] : observation[1]] = False
    left = ()
    if with_budget:
        left_values = rng.integers(0, 2, size=length)
        # a banned token can never be a sampled agent token
        clash = mask & (left_values == 0) & (tokens == CALL_OPEN_ID)
        tokens[clash] = CALL_OPEN_ID + 1
        left = tuple(int(v) for v in left_values)
    return Rollout(
        question_id=f"q{rng.integers(1000)}",
        prompt_ids=tuple(int(t) for t in rng.integers(vocab_size, size=prompt)),
        token_ids=tuple(int(t) for t in tokens),
        action_mask=tuple(bool(m) for m in mask),
        searches_left=left,
    )


def with_recorded_logprobs(params: PolicyParams, rollout: Rollout) -> Rollout:
    recorded = np.zeros(len(rollout.token_ids))
    recorded[np.asarray(rollout.action_mask, dtype=bool)] = sequence_log_probs(params, rollout)
    return Rollout(
        question_id=rollout.question_id,
        question_text=rollout.question_text,
        segments=rollout.segments,
        prompt_ids=rollout.prompt_ids,
        token_ids=rollout.token_ids,
        action_mask=rollout.action_mask,
        logprobs=tuple(float(v) for v in recorded),
        searches_left=rollout.searches_left,
        temperature=rollout.temperature,
    )


def central_difference(
    f: Callable[[PolicyParams], float], params: PolicyParams, indices: Sequence[int]
) -> np.ndarray:
    numeric = []
    for index in indices:
        plus = params.values.copy()
        minus = params.values.copy()
        plus[index] += FD_STEP
        minus[index] -= FD_STEP
        upper = f(PolicyParams(params.arch, plus))
        lower = f(PolicyParams(params.arch, minus))
        numeric.append((upper - lower) / (2 * FD_STEP))
    return np.array(numeric)


def assert_gradient_matches(
    f: Callable[[PolicyParams], float],
    params: PolicyParams,
    gradient: np.ndarray,
    count: int = 100,
) -> None:
    """Element-wise check on the ``count`` largest-magnitude gradient entries."""
    indices = np.argsort(-np.abs(gradient), kind="stable")[:count]
    numeric = central_difference(f, params, indices)
    np.testing.assert_allclose(gradient[indices], numeric, rtol=1e-4, atol=1e-9)
