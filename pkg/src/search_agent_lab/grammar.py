"""Rollout data model and the tagged text format.

A rollout is zero or more (think, tool_call, tool_response) cycles followed by
exactly one think and one answer::

    <think>...</think>
    <tool_call>{"name": "web_search", "arguments": {"queries": [...]}}</tool_call>
    <tool_response>{"name": "web_search", "content": {"results": [...]}}</tool_response>
    <think>...</think>
    <answer>...</answer>

Whitespace between blocks is ignored; anything else outside a block is not.
"""

from __future__ import annotations

import json
import re
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from enum import Enum

from .errors import FormatError, FormatViolation, InvalidStructure
from .world import SearchResult

TOOL_NAME = "web_search"


class SegmentKind(Enum):
    THOUGHT = "think"
    TOOL_CALL = "tool_call"
    TOOL_RESPONSE = "tool_response"
    ANSWER = "answer"

    @property
    def open_tag(self) -> str:
        return f"<{self.value}>"

    @property
    def close_tag(self) -> str:
        return f"</{self.value}>"


_TAG_RE = re.compile(r"<(/?)(think|tool_call|tool_response|answer)>")


def tool_call_body(queries: Iterable[str]) -> str:
    return json.dumps({"name": TOOL_NAME, "arguments": {"queries": list(queries)}})


def tool_response_body(results: Iterable[SearchResult], notice: str | None = None) -> str:
    content: dict = {
        "results": [
            {"title": r.title, "snippet": r.snippet, "score": r.score} for r in results
        ]
    }
    if notice is not None:
        content["notice"] = notice
    return json.dumps({"name": TOOL_NAME, "content": content})


def parse_tool_call_body(body: str) -> tuple[str, ...] | None:
    try:
        call = json.loads(body)
    except json.JSONDecodeError:
        return None
    if not isinstance(call, dict) or set(call) != {"name", "arguments"}:
        return None
    arguments = call["arguments"]
    if call["name"] != TOOL_NAME or not isinstance(arguments, dict):
        return None
    if set(arguments) != {"queries"}:
        return None
    queries = arguments["queries"]
    if not isinstance(queries, list) or not queries:
        return None
    if not all(isinstance(q, str) and q.strip() for q in queries):
        return None
    return tuple(queries)


def parse_tool_response_body(
    body: str,
) -> tuple[tuple[SearchResult, ...], str | None] | None:
    try:
        response = json.loads(body)
    except json.JSONDecodeError:
        return None
    if not isinstance(response, dict) or set(response) != {"name", "content"}:
        return None
    content = response["content"]
    if response["name"] != TOOL_NAME or not isinstance(content, dict):
        return None
    if "results" not in content or not set(content) <= {"results", "notice"}:
        return None
    notice = content.get("notice")
    if notice is not None and not isinstance(notice, str):
        return None
    if not isinstance(content["results"], list):
        return None

    results = []
    for item in content["results"]:
        if not isinstance(item, dict) or set(item) != {"title", "snippet", "score"}:
            return None
        title, snippet, score = item["title"], item["snippet"], item["score"]
        if not isinstance(title, str) or not isinstance(snippet, str):
            return None
        if not isinstance(score, int) or isinstance(score, bool):
            return None
        results.append(SearchResult(title, snippet, score))
    return tuple(results), notice


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    payload: str
    name: str | None = None
    queries: tuple[str, ...] = ()
    results: tuple[SearchResult, ...] = ()
    notice: str | None = None

    @classmethod
    def thought(cls, text: str) -> Segment:
        return cls(SegmentKind.THOUGHT, text)

    @classmethod
    def answer(cls, text: str) -> Segment:
        return cls(SegmentKind.ANSWER, text)

    @classmethod
    def tool_call(cls, queries: Iterable[str]) -> Segment:
        queries = tuple(queries)
        return cls(SegmentKind.TOOL_CALL, tool_call_body(queries), TOOL_NAME, queries)

    @classmethod
    def tool_response(
        cls, results: Iterable[SearchResult], notice: str | None = None
    ) -> Segment:
        results = tuple(results)
        body = tool_response_body(results, notice)
        return cls(SegmentKind.TOOL_RESPONSE, body, TOOL_NAME, results=results, notice=notice)


@dataclass(frozen=True)
class Rollout:
    """One trajectory for one question.

    ``token_ids``, ``action_mask``, ``logprobs`` and ``searches_left`` are
    aligned per response token; ``logprobs`` holds the sampling-time values
    (0.0 at environment tokens). ``prompt_ids`` condition every token but are
    never scored. ``format_error`` is set on sampled rollouts that fail to
    parse, in which case ``segments`` is empty.
    """

    question_id: str = ""
    question_text: str = ""
    segments: tuple[Segment, ...] = ()
    prompt_ids: tuple[int, ...] = ()
    token_ids: tuple[int, ...] = ()
    action_mask: tuple[bool, ...] = ()
    logprobs: tuple[float, ...] = ()
    searches_left: tuple[int, ...] = ()
    temperature: float = 1.0
    text: str = ""
    format_error: str | None = None

    def __post_init__(self) -> None:
        if len(self.token_ids) != len(self.action_mask):
            raise InvalidStructure("token_ids and action_mask differ in length")
        for name in ("logprobs", "searches_left"):
            values = getattr(self, name)
            if values and len(values) != len(self.token_ids):
                raise InvalidStructure(f"{name} is not aligned with token_ids")

    @property
    def format_valid(self) -> bool:
        return self.format_error is None and bool(self.segments)

    @property
    def agent_token_count(self) -> int:
        return sum(self.action_mask)

    def rendered_text(self) -> str:
        if self.text or self.format_error is not None:
            return self.text
        return render_rollout(self)

    def answer_text(self) -> str | None:
        if not self.segments or self.segments[-1].kind is not SegmentKind.ANSWER:
            return None
        return self.segments[-1].payload


class _State(Enum):
    START = "start"
    AFTER_THOUGHT = "after_thought"
    AFTER_CALL = "after_call"
    DONE = "done"


_TRANSITIONS = {
    (_State.START, SegmentKind.THOUGHT): _State.AFTER_THOUGHT,
    (_State.AFTER_THOUGHT, SegmentKind.TOOL_CALL): _State.AFTER_CALL,
    (_State.AFTER_THOUGHT, SegmentKind.ANSWER): _State.DONE,
    (_State.AFTER_CALL, SegmentKind.TOOL_RESPONSE): _State.START,
}


def validate_segments(segments: Iterable[Segment]) -> None:
    state = _State.START
    for index, segment in enumerate(segments):
        next_state = _TRANSITIONS.get((state, segment.kind))
        if next_state is None:
            raise InvalidStructure(f"segment {index} ({segment.kind.value}) out of order")
        if _TAG_RE.search(segment.payload):
            raise InvalidStructure(f"segment {index} payload contains a grammar tag")
        if segment.kind in (SegmentKind.THOUGHT, SegmentKind.ANSWER):
            if not segment.payload.strip():
                raise InvalidStructure(f"segment {index} ({segment.kind.value}) is empty")
        elif segment.kind is SegmentKind.TOOL_CALL:
            if segment.name != TOOL_NAME or not segment.queries:
                raise InvalidStructure(f"segment {index} is not a web_search call")
            if segment.payload != tool_call_body(segment.queries):
                raise InvalidStructure(f"segment {index} payload disagrees with its queries")
        elif segment.payload != tool_response_body(segment.results, segment.notice):
            raise InvalidStructure(f"segment {index} payload disagrees with its results")
        state = next_state
    if state is not _State.DONE:
        raise InvalidStructure("rollout does not end with a thought and an answer")


def render_rollout(rollout: Rollout) -> str:
    validate_segments(rollout.segments)
    return "\n".join(
        f"{s.kind.open_tag}{s.payload}{s.kind.close_tag}" for s in rollout.segments
    )


def _text_block(kind: SegmentKind) -> Callable[[str, int], Segment]:
    def build(body: str, position: int) -> Segment:
        if not body.strip():
            raise FormatError(FormatViolation.EMPTY_BLOCK, position, kind.value)
        return Segment(kind, body)

    return build


def _tool_call_block(body: str, position: int) -> Segment:
    queries = parse_tool_call_body(body.strip())
    if queries is None:
        raise FormatError(FormatViolation.MALFORMED_TOOL_CALL, position)
    return Segment.tool_call(queries)


def _tool_response_block(body: str, position: int) -> Segment:
    parsed = parse_tool_response_body(body.strip())
    if parsed is None:
        raise FormatError(FormatViolation.MALFORMED_TOOL_RESPONSE, position)
    results, notice = parsed
    return Segment.tool_response(results, notice)


_BLOCK_BUILDERS: dict[SegmentKind, Callable[[str, int], Segment]] = {
    SegmentKind.THOUGHT: _text_block(SegmentKind.THOUGHT),
    SegmentKind.TOOL_CALL: _tool_call_block,
    SegmentKind.TOOL_RESPONSE: _tool_response_block,
    SegmentKind.ANSWER: _text_block(SegmentKind.ANSWER),
}


def _first_content(text: str, start: int, end: int) -> int | None:
    gap = text[start:end]
    stripped = gap.lstrip()
    if not stripped:
        return None
    return start + len(gap) - len(stripped)


def parse_rollout(text: str, question_id: str = "", question_text: str = "") -> Rollout:
    """Decompose ``text`` into segments or raise FormatError at the first violation."""
    state = _State.START
    segments: list[Segment] = []
    position = 0
    open_block: tuple[SegmentKind, int, int, _State] | None = None

    for match in _TAG_RE.finditer(text):
        closing = match.group(1) == "/"
        kind = SegmentKind(match.group(2))

        if open_block is None:
            stray = _first_content(text, position, match.start())
            if stray is not None:
                raise FormatError(FormatViolation.TRAILING_CONTENT, stray)
            if closing:
                raise FormatError(FormatViolation.UNBALANCED_TAG, match.start(), kind.value)
            if state is _State.DONE:
                raise FormatError(FormatViolation.TRAILING_CONTENT, match.start())
            next_state = _TRANSITIONS.get((state, kind))
            if next_state is None:
                raise FormatError(FormatViolation.WRONG_ORDER, match.start(), kind.value)
            open_block = (kind, match.start(), match.end(), next_state)
            continue

        open_kind, open_start, body_start, next_state = open_block
        if not closing or kind is not open_kind:
            raise FormatError(FormatViolation.UNBALANCED_TAG, match.start(), kind.value)
        body = text[body_start : match.start()]
        segments.append(_BLOCK_BUILDERS[kind](body, open_start))
        state = next_state
        open_block = None
        position = match.end()

    if open_block is not None:
        raise FormatError(FormatViolation.UNBALANCED_TAG, open_block[1], "unclosed")
    stray = _first_content(text, position, len(text))
    if stray is not None:
        raise FormatError(FormatViolation.TRAILING_CONTENT, stray)
    if state is _State.AFTER_CALL:
        raise FormatError(FormatViolation.WRONG_ORDER, len(text), "tool_call unanswered")
    if state is not _State.DONE:
        raise FormatError(FormatViolation.MISSING_ANSWER, len(text))

    return Rollout(question_id=question_id, question_text=question_text, segments=tuple(segments))


def check_format(text: str) -> float:
    try:
        parse_rollout(text)
    except FormatError:
        return 0.0
    return 1.0


def count_tool_calls(rollout: Rollout) -> int:
    return sum(1 for s in rollout.segments if s.kind is SegmentKind.TOOL_CALL)
