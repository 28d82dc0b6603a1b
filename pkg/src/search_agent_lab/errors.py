from __future__ import annotations

from enum import Enum


class LabError(Exception):
    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


class FormatViolation(Enum):
    UNBALANCED_TAG = "unbalanced_tag"
    WRONG_ORDER = "wrong_order"
    TRAILING_CONTENT = "trailing_content"
    MALFORMED_TOOL_CALL = "malformed_tool_call"
    MALFORMED_TOOL_RESPONSE = "malformed_tool_response"
    EMPTY_BLOCK = "empty_block"
    MISSING_ANSWER = "missing_answer"


class FormatError(LabError):
    def __init__(self, kind: FormatViolation, position: int, detail: str = ""):
        message = f"FORMAT {kind.value} at {position}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.kind = kind
        self.position = position
        self.detail = detail


class InvalidStructure(LabError):
    def __init__(self, reason: str):
        super().__init__(f"ERR invalid rollout structure: {reason}")
        self.reason = reason


class InvalidSize(LabError):
    def __init__(self, parameter: str, value: int, bound: str):
        super().__init__(f"ERR {parameter}={value}, must be {bound}")
        self.parameter = parameter
        self.value = value
        self.bound = bound


class InvalidGraph(LabError):
    def __init__(self, reason: str):
        super().__init__(f"ERR invalid knowledge graph: {reason}")
        self.reason = reason


class ExhaustedPaths(LabError):
    def __init__(self, hop_count: int, requested: int, available: int):
        message = (
            f"ERR graph supplies {available} distinct {hop_count}-hop paths, "
            f"{requested} requested"
        )
        super().__init__(message)
        self.hop_count = hop_count
        self.requested = requested
        self.available = available


class BudgetExhausted(LabError):
    def __init__(self, budget: int):
        super().__init__(f"ERR search budget of {budget} exhausted")
        self.budget = budget


class ContextOverflow(LabError):
    def __init__(self, length: int, window: int):
        super().__init__(f"ERR context of {length} tokens exceeds window {window}")
        self.length = length
        self.window = window


class ArchitectureMismatch(LabError):
    def __init__(self, expected: object, actual: object):
        super().__init__(f"ERR architecture mismatch: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class MissingOldLogProbs(LabError):
    def __init__(self, question_id: str):
        super().__init__(f"ERR rollout for {question_id!r} has no recorded log-probs")
        self.question_id = question_id


class GroupTooSmall(LabError):
    def __init__(self, size: int):
        super().__init__(f"ERR group of {size} rollouts, at least 2 required")
        self.size = size


class EmptyAgentSequence(LabError):
    def __init__(self, question_id: str):
        super().__init__(f"ERR rollout for {question_id!r} has no agent tokens")
        self.question_id = question_id


class EmptyData(LabError):
    def __init__(self, what: str):
        super().__init__(f"ERR no {what} to train on")
        self.what = what


class TooFewQuestions(LabError):
    def __init__(self, questions: int, shards: int):
        super().__init__(f"ERR cannot split {questions} questions into {shards} shards")
        self.questions = questions
        self.shards = shards


class SnapshotRoleError(LabError):
    def __init__(self, expected: str, actual: str):
        super().__init__(f"ERR expected a {expected} snapshot, got {actual}")
        self.expected = expected
        self.actual = actual


class ConfigError(LabError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"ERR config {key}: {reason}")
        self.key = key
        self.reason = reason


class CheckpointError(LabError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"ERR checkpoint {path}: {reason}")
        self.path = path
        self.reason = reason


class ReportError(LabError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"ERR cannot write report {path}: {reason}")
        self.path = path
        self.reason = reason


class PoolOrderError(LabError):
    def __init__(self, previous: int, incoming: int):
        super().__init__(
            f"ERR pool is append-only by iteration: got {incoming} after {previous}"
        )
        self.previous = previous
        self.incoming = incoming


class EvalOverlap(LabError):
    def __init__(self, question_ids: list[str]):
        shown = ", ".join(question_ids[:3])
        super().__init__(
            f"ERR {len(question_ids)} evaluation questions share a path with training: {shown}"
        )
        self.question_ids = question_ids
