"""Tiny autoregressive policy with exact log-probabilities and gradients.

The model sees the last ``context_window`` tokens, right-aligned so the newest
token sits in the last slot:

    h      = tanh(b1 + sum_slot E[slot, token])
    logits = U h + b2 + copy
    copy   = for every context token tok_j (slot j >= 1):
             logits[tok_j] += K[tok_{j-1}] . h + a[j-1]

The copy term lets the policy point back at tokens already in view (entity
names in the question or in search results). All parameters live in one flat
float64 vector; zero parameters give the uniform distribution.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import (
    ArchitectureMismatch,
    ConfigError,
    ContextOverflow,
    FormatError,
    InvalidSize,
    InvalidStructure,
)
from .grammar import (
    Rollout,
    Segment,
    SegmentKind,
    parse_rollout,
    parse_tool_call_body,
    tool_response_body,
)
from .world import (
    BUDGET_NOTICE,
    DEFAULT_TOP_K,
    DESCRIPTION_WORDS,
    ENTITY_KINDS,
    ID_TEMPLATE_WORDS,
    INVALID_CALL_NOTICE,
    OOD_TEMPLATE_WORDS,
    KnowledgeGraph,
    Question,
    SearchResult,
    SearchSession,
)

EOS = "<eos>"
UNK = "<unk>"
CALL_HEAD = '{"name": "web_search", "arguments": {"queries": ["'
QUERY_SEP = '", "'
CALL_TAIL = '"]}}'
RESULT_SEP = "|"

SPECIAL_TOKENS = (
    EOS,
    UNK,
    SegmentKind.THOUGHT.open_tag,
    SegmentKind.THOUGHT.close_tag,
    SegmentKind.TOOL_CALL.open_tag,
    SegmentKind.TOOL_CALL.close_tag,
    SegmentKind.TOOL_RESPONSE.open_tag,
    SegmentKind.TOOL_RESPONSE.close_tag,
    SegmentKind.ANSWER.open_tag,
    SegmentKind.ANSWER.close_tag,
    CALL_HEAD,
    QUERY_SEP,
    CALL_TAIL,
    RESULT_SEP,
)
(
    EOS_ID,
    UNK_ID,
    THINK_OPEN_ID,
    THINK_CLOSE_ID,
    CALL_OPEN_ID,
    CALL_CLOSE_ID,
    RESPONSE_OPEN_ID,
    RESPONSE_CLOSE_ID,
    ANSWER_OPEN_ID,
    ANSWER_CLOSE_ID,
    CALL_HEAD_ID,
    QUERY_SEP_ID,
    CALL_TAIL_ID,
    RESULT_SEP_ID,
) = range(len(SPECIAL_TOKENS))

_OPEN_TAG_IDS = frozenset({THINK_OPEN_ID, CALL_OPEN_ID, RESPONSE_OPEN_ID, ANSWER_OPEN_ID})
_GLUED_IDS = frozenset(range(THINK_OPEN_ID, CALL_TAIL_ID + 1))
_KIND_OPEN_IDS = {
    SegmentKind.THOUGHT: (THINK_OPEN_ID, THINK_CLOSE_ID),
    SegmentKind.ANSWER: (ANSWER_OPEN_ID, ANSWER_CLOSE_ID),
}

THOUGHT_WORDS = (
    "i",
    "need",
    "to",
    "search",
    "for",
    "find",
    "now",
    "know",
    "answer",
    "found",
    "check",
    "next",
    "then",
)

DEFAULT_MAX_TOKENS = 512


class Vocabulary:
    """Closed token set: structural tokens first, then sorted words."""

    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ConfigError("vocabulary", "must start with the structural tokens")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary", "tokens are not unique")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._ids = {token: index for index, token in enumerate(self.tokens)}

    @classmethod
    def from_world(cls, kg: KnowledgeGraph) -> Vocabulary:
        words = set(ID_TEMPLATE_WORDS) | set(OOD_TEMPLATE_WORDS)
        words |= set(DESCRIPTION_WORDS) | set(ENTITY_KINDS) | set(THOUGHT_WORDS)
        words |= set(BUDGET_NOTICE.split()) | set(INVALID_CALL_NOTICE.split())
        words |= set(kg.relations) | set(kg.entity_names)
        for entity in kg.entities:
            words |= set(entity.description.split())
        words -= set(SPECIAL_TOKENS)
        return cls(SPECIAL_TOKENS + tuple(sorted(words)))

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode_words(self, text: str) -> list[int]:
        return [self.id(word) for word in text.split()]

    def decode_span(self, token_ids: Iterable[int]) -> str:
        pieces: list[str] = []
        previous_word = False
        for token_id in token_ids:
            if token_id == EOS_ID:
                continue
            if token_id in _GLUED_IDS:
                pieces.append(self.tokens[token_id])
                previous_word = False
                continue
            if previous_word:
                pieces.append(" ")
            pieces.append(self.tokens[token_id])
            previous_word = True
        return "".join(pieces)

    def observation_tokens(
        self, results: Iterable[SearchResult], notice: str | None
    ) -> list[int]:
        tokens = []
        for result in results:
            tokens += self.encode_words(result.snippet)
            tokens.append(RESULT_SEP_ID)
        if notice is not None:
            tokens += self.encode_words(notice)
        return tokens


def decode_response(
    vocab: Vocabulary,
    token_ids: Sequence[int],
    action_mask: Sequence[bool],
    observation_bodies: Sequence[str],
) -> str:
    """Render response tokens as rollout text.

    Environment-injected spans (mask false) are replaced by the canonical
    tool response bodies, in order.
    """
    pieces: list[str] = []
    bodies = iter(observation_bodies)
    span: list[int] = []
    index = 0

    def flush() -> None:
        if span:
            pieces.append(vocab.decode_span(span))
            span.clear()

    while index < len(token_ids):
        token_id = token_ids[index]
        if not action_mask[index]:
            flush()
            while index < len(token_ids) and not action_mask[index]:
                index += 1
            if pieces:
                pieces.append("\n")
            tag = SegmentKind.TOOL_RESPONSE
            pieces.append(f"{tag.open_tag}{next(bodies)}{tag.close_tag}")
            continue
        if token_id in _OPEN_TAG_IDS:
            flush()
            if pieces:
                pieces.append("\n")
        span.append(token_id)
        index += 1
    flush()
    return "".join(pieces)


def encode_rollout(
    vocab: Vocabulary, segments: Iterable[Segment], max_searches: int | None = None
) -> tuple[list[int], list[bool], list[int]]:
    """Token view of a grammar-valid segment list.

    Returns token ids, the action mask and, when ``max_searches`` is given,
    the remaining search budget before each token.
    """
    tokens: list[int] = []
    mask: list[bool] = []
    left: list[int] = []
    remaining = max_searches if max_searches is not None else 0
    pending_queries = 0

    def emit(ids: list[int], agent: bool) -> None:
        tokens.extend(ids)
        mask.extend([agent] * len(ids))
        left.extend([remaining] * len(ids))

    for segment in segments:
        if segment.kind is SegmentKind.TOOL_CALL:
            if max_searches is not None and remaining == 0:
                raise InvalidStructure("tool call beyond the search budget")
            ids = [CALL_OPEN_ID, CALL_HEAD_ID]
            for number, query in enumerate(segment.queries):
                if number:
                    ids.append(QUERY_SEP_ID)
                ids += vocab.encode_words(query)
            emit(ids + [CALL_TAIL_ID, CALL_CLOSE_ID], agent=True)
            pending_queries = len(segment.queries)
        elif segment.kind is SegmentKind.TOOL_RESPONSE:
            observed = vocab.observation_tokens(segment.results, segment.notice)
            emit([RESPONSE_OPEN_ID, *observed, RESPONSE_CLOSE_ID], agent=False)
            remaining -= min(pending_queries, remaining)
            pending_queries = 0
        else:
            open_id, close_id = _KIND_OPEN_IDS[segment.kind]
            emit([open_id, *vocab.encode_words(segment.payload), close_id], agent=True)

    return tokens, mask, left if max_searches is not None else []


@dataclass(frozen=True)
class PolicyArch:
    context_window: int = 32
    hidden_size: int = 16
    vocab_size: int = 0

    def __post_init__(self) -> None:
        if self.context_window < 2:
            raise ConfigError("policy.context_window", "must be >= 2")
        if self.hidden_size < 1:
            raise ConfigError("policy.hidden_size", "must be >= 1")
        if self.vocab_size < len(SPECIAL_TOKENS):
            raise ConfigError("policy.vocab_size", "smaller than the structural tokens")

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        w, v, h = self.context_window, self.vocab_size, self.hidden_size
        return ((w, v, h), (h,), (v, h), (v,), (v, h), (w - 1,))

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for shape in self.shapes)


class _Views(NamedTuple):
    embed: np.ndarray
    hidden_bias: np.ndarray
    out_weight: np.ndarray
    out_bias: np.ndarray
    copy_keys: np.ndarray
    copy_bias: np.ndarray


def _views(arch: PolicyArch, flat: np.ndarray) -> _Views:
    parts = []
    offset = 0
    for shape in arch.shapes:
        size = int(np.prod(shape))
        parts.append(flat[offset : offset + size].reshape(shape))
        offset += size
    return _Views(*parts)


@dataclass(eq=False)
class PolicyParams:
    arch: PolicyArch
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.arch.param_count,):
            raise ArchitectureMismatch(self.arch.param_count, self.values.shape)
        if not np.all(np.isfinite(self.values)):
            raise InvalidStructure("policy parameters must be finite")

    @classmethod
    def zeros(cls, arch: PolicyArch) -> PolicyParams:
        return cls(arch, np.zeros(arch.param_count))

    @classmethod
    def initialize(cls, arch: PolicyArch, seed: int, scale: float = 0.01) -> PolicyParams:
        rng = np.random.default_rng(seed)
        return cls(arch, rng.normal(0.0, scale, arch.param_count))

    def copy(self) -> PolicyParams:
        return PolicyParams(self.arch, self.values.copy())

    def views(self) -> _Views:
        return _views(self.arch, self.values)


class SnapshotRole(Enum):
    OLD = "old"
    REFERENCE = "reference"
    BASE = "base"


@dataclass(frozen=True, eq=False)
class PolicySnapshot:
    params: PolicyParams
    role: SnapshotRole

    @classmethod
    def capture(cls, params: PolicyParams, role: SnapshotRole) -> PolicySnapshot:
        frozen = params.copy()
        frozen.values.setflags(write=False)
        return cls(frozen, role)


def check_architecture(expected: PolicyArch, *others: PolicyArch) -> None:
    for other in others:
        if other != expected:
            raise ArchitectureMismatch(expected, other)


class _Forward(NamedTuple):
    ids: np.ndarray
    valid: np.ndarray
    copy_valid: np.ndarray
    hidden: np.ndarray
    keys: np.ndarray
    logp: np.ndarray


def _windows(window: int, sequence: np.ndarray, ends: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    positions = ends[:, None] + np.arange(-window, 0)[None, :]
    valid = positions >= 0
    if not len(sequence):
        sequence = np.zeros(1, dtype=np.int64)
    ids = np.where(valid, sequence[np.clip(positions, 0, None)], 0)
    return ids, valid


def _forward(
    params: PolicyParams,
    ids: np.ndarray,
    valid: np.ndarray,
    temperature: float,
    banned: np.ndarray | None = None,
) -> _Forward:
    view = params.views()
    slots = np.arange(params.arch.context_window)[None, :]
    embedded = view.embed[slots, ids] * valid[..., None]
    hidden = np.tanh(view.hidden_bias + embedded.sum(axis=1))
    logits = hidden @ view.out_weight.T + view.out_bias

    copy_valid = valid[:, 1:] & valid[:, :-1]
    keys = view.copy_keys[ids[:, :-1]]
    copy = np.einsum("nwh,nh->nw", keys, hidden) + view.copy_bias[None, :]
    copy = np.where(copy_valid, copy, 0.0)
    rows = np.broadcast_to(np.arange(len(ids))[:, None], copy.shape)
    np.add.at(logits, (rows, ids[:, 1:]), copy)

    logits = logits / temperature
    if banned is not None:
        logits = np.where(banned, -np.inf, logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return _Forward(ids, valid, copy_valid, hidden, keys, logp)


def _single_window(window: int, context: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    sequence = np.asarray(context, dtype=np.int64)
    return _windows(window, sequence, np.array([len(sequence)]))


def next_token_distribution(
    params: PolicyParams, context: Sequence[int], temperature: float = 1.0
) -> np.ndarray:
    if temperature <= 0:
        raise ConfigError("temperature", "must be positive")
    if len(context) > params.arch.context_window:
        raise ContextOverflow(len(context), params.arch.context_window)
    ids, valid = _single_window(params.arch.context_window, context)
    return np.exp(_forward(params, ids, valid, temperature).logp[0])


def _draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    cumulative = np.cumsum(probs)
    choice = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(choice, int(np.flatnonzero(probs)[-1]))


def sample_rollout(
    params: PolicyParams,
    question: Question,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    temperature: float = 1.0,
    max_searches: int = 10,
    seed: int = 0,
    top_k: int = DEFAULT_TOP_K,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> Rollout:
    """Generate one rollout, executing each completed tool call against ``kg``.

    ``temperature=0`` selects greedy decoding. Once the search budget is spent
    the ``<tool_call>`` token is removed from the action space; the same mask
    is replayed when the rollout is scored.
    """
    if max_searches < 0:
        raise InvalidSize("max_searches", max_searches, ">= 0")
    if temperature < 0:
        raise ConfigError("temperature", "must be non-negative")
    if len(vocab) != params.arch.vocab_size:
        raise ArchitectureMismatch(params.arch.vocab_size, len(vocab))

    greedy = temperature == 0
    scoring_temperature = 1.0 if greedy else temperature
    rng = np.random.default_rng(seed)
    session = SearchSession(kg, top_k, max_searches)
    window = params.arch.context_window

    prompt = vocab.encode_words(question.text)
    tokens: list[int] = []
    mask: list[bool] = []
    logprobs: list[float] = []
    left: list[int] = []
    bodies: list[str] = []
    call_start: int | None = None
    banned = np.zeros((1, len(vocab)), dtype=bool)

    while len(tokens) < max_tokens:
        ids, valid = _single_window(window, (prompt + tokens)[-window:])
        banned[0, CALL_OPEN_ID] = session.remaining == 0
        logp = _forward(params, ids, valid, scoring_temperature, banned).logp[0]
        token = int(np.argmax(logp)) if greedy else _draw(rng, np.exp(logp))

        left.append(session.remaining)
        tokens.append(token)
        mask.append(True)
        logprobs.append(float(logp[token]))

        if token in (EOS_ID, ANSWER_CLOSE_ID):
            break
        if token == CALL_OPEN_ID:
            call_start = len(tokens)
        elif token == CALL_CLOSE_ID and call_start is not None:
            queries = parse_tool_call_body(vocab.decode_span(tokens[call_start:-1]))
            if queries is None:
                results, notice = [], INVALID_CALL_NOTICE
            else:
                results, notice = session.execute(queries)
            observed = [
                RESPONSE_OPEN_ID,
                *vocab.observation_tokens(results, notice),
                RESPONSE_CLOSE_ID,
            ]
            tokens += observed
            mask += [False] * len(observed)
            logprobs += [0.0] * len(observed)
            left += [session.remaining] * len(observed)
            bodies.append(tool_response_body(results, notice))
            call_start = None

    text = decode_response(vocab, tokens, mask, bodies)
    try:
        parsed = parse_rollout(text, question.id, question.text)
        segments, error = parsed.segments, None
    except FormatError as exc:
        segments, error = (), exc.message

    return Rollout(
        question_id=question.id,
        question_text=question.text,
        segments=segments,
        prompt_ids=tuple(prompt),
        token_ids=tuple(tokens),
        action_mask=tuple(mask),
        logprobs=tuple(logprobs),
        searches_left=tuple(left),
        temperature=scoring_temperature,
        text=text,
        format_error=error,
    )


class RolloutScore:
    """Agent-token log-probabilities of one rollout plus a cached backward pass."""

    def __init__(self, params: PolicyParams, rollout: Rollout) -> None:
        if not rollout.token_ids:
            raise InvalidStructure("rollout carries no tokens")
        self.params = params
        self.temperature = rollout.temperature
        sequence = np.asarray(rollout.prompt_ids + rollout.token_ids, dtype=np.int64)
        if sequence.max() >= params.arch.vocab_size:
            raise ArchitectureMismatch(params.arch.vocab_size, int(sequence.max()) + 1)
        agent = np.flatnonzero(np.asarray(rollout.action_mask, dtype=bool))
        ends = len(rollout.prompt_ids) + agent

        banned = None
        if rollout.searches_left:
            exhausted = np.asarray(rollout.searches_left)[agent] == 0
            if exhausted.any():
                banned = np.zeros((len(agent), params.arch.vocab_size), dtype=bool)
                banned[:, CALL_OPEN_ID] = exhausted

        ids, valid = _windows(params.arch.context_window, sequence, ends)
        self.targets = sequence[ends]
        self._forward = _forward(params, ids, valid, self.temperature, banned)
        self.logprobs = self._forward.logp[np.arange(len(agent)), self.targets]

    def gradient(self, weights: Sequence[float], out: np.ndarray | None = None) -> np.ndarray:
        """Exact gradient of sum_t weights[t] * logprobs[t]."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != self.logprobs.shape:
            raise InvalidStructure("weights do not align with the agent tokens")
        arch = self.params.arch
        grad = out if out is not None else np.zeros(arch.param_count)
        view = self.params.views()
        g = _views(arch, grad)
        fwd = self._forward
        rows = np.arange(len(weights))

        g_logits = -np.exp(fwd.logp) * weights[:, None]
        g_logits[rows, self.targets] += weights
        g_logits /= self.temperature

        g.out_weight[...] += g_logits.T @ fwd.hidden
        g.out_bias[...] += g_logits.sum(axis=0)

        g_copy = np.take_along_axis(g_logits, fwd.ids[:, 1:], axis=1) * fwd.copy_valid
        g.copy_bias[...] += g_copy.sum(axis=0)
        np.add.at(g.copy_keys, fwd.ids[:, :-1], g_copy[..., None] * fwd.hidden[:, None, :])

        g_hidden = g_logits @ view.out_weight + np.einsum("nw,nwh->nh", g_copy, fwd.keys)
        g_pre = g_hidden * (1.0 - fwd.hidden**2)
        g.hidden_bias[...] += g_pre.sum(axis=0)
        slots = np.broadcast_to(np.arange(arch.context_window)[None, :], fwd.ids.shape)
        np.add.at(g.embed, (slots, fwd.ids), g_pre[:, None, :] * fwd.valid[..., None])
        return grad


def score_rollout(params: PolicyParams, rollout: Rollout) -> RolloutScore:
    return RolloutScore(params, rollout)


def sequence_log_probs(params: PolicyParams, rollout: Rollout) -> np.ndarray:
    return RolloutScore(params, rollout).logprobs


def grad_weighted_log_probs(
    params: PolicyParams, rollout: Rollout, weights: Sequence[float]
) -> np.ndarray:
    return RolloutScore(params, rollout).gradient(weights)
