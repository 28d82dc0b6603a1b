"""Answer scoring: the deterministic judge stand-in, token F1 and hard recall."""

from __future__ import annotations

import string
from collections import Counter
from collections.abc import Iterable

_ARTICLES = frozenset({"a", "an", "the"})
_PUNCTUATION = str.maketrans("", "", string.punctuation)


def normalize_tokens(text: str) -> list[str]:
    tokens = text.lower().translate(_PUNCTUATION).split()
    return [token for token in tokens if token not in _ARTICLES]


def _contains(haystack: list[str], needle: list[str]) -> bool:
    if not needle or len(needle) > len(haystack):
        return False
    width = len(needle)
    return any(
        haystack[start : start + width] == needle
        for start in range(len(haystack) - width + 1)
    )


def judge_answer(pred: str, gold: str, entities: Iterable[str] = ()) -> float:
    """Return 1.0 when the normalized gold answer appears contiguously in pred.

    Predictions naming two or more distinct entities from ``entities`` are
    treated as answer listings and rejected.
    """
    pred_tokens = normalize_tokens(pred)
    gold_tokens = normalize_tokens(gold)
    if not pred_tokens or not gold_tokens:
        return 0.0
    if not _contains(pred_tokens, gold_tokens):
        return 0.0

    mentioned = set()
    for entity in entities:
        entity_tokens = normalize_tokens(entity)
        if entity_tokens and _contains(pred_tokens, entity_tokens):
            mentioned.add(tuple(entity_tokens))
            if len(mentioned) >= 2:
                return 0.0
    return 1.0


def f1_score(pred: str, gold: str) -> float:
    pred_tokens = normalize_tokens(pred)
    gold_tokens = normalize_tokens(gold)
    if not pred_tokens or not gold_tokens:
        return 0.0

    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def recall_reward(pred: str, gold: str) -> float:
    # hard label: partial recall earns nothing
    gold_tokens = normalize_tokens(gold)
    if not gold_tokens:
        return 0.0
    pred_tokens = set(normalize_tokens(pred))
    return 1.0 if all(token in pred_tokens for token in gold_tokens) else 0.0
