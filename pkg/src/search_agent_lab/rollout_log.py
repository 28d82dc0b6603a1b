from __future__ import annotations

import json
import logging
import os
import threading
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from enum import Enum
from io import TextIOWrapper
from pathlib import Path

from .errors import FormatError
from .grammar import Rollout, count_tool_calls, parse_rollout
from .reward import RewardBreakdown

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredRollout:
    rollout: Rollout
    reward: RewardBreakdown
    tool_call_count: int
    iteration_index: int
    seed: int = 0

    @classmethod
    def score(
        cls, rollout: Rollout, reward: RewardBreakdown, iteration_index: int, seed: int = 0
    ) -> ScoredRollout:
        return cls(rollout, reward, count_tool_calls(rollout), iteration_index, seed)

    @property
    def question_id(self) -> str:
        return self.rollout.question_id


def encode_record(record: ScoredRollout) -> dict:
    rollout = record.rollout
    return {
        "question_id": rollout.question_id,
        "question_text": rollout.question_text,
        "rendered_text": rollout.rendered_text(),
        "reward_breakdown": record.reward.to_dict(),
        "tool_call_count": record.tool_call_count,
        "iteration_index": record.iteration_index,
        "seed": record.seed,
        "format_error": rollout.format_error,
        "temperature": rollout.temperature,
        "prompt_ids": list(rollout.prompt_ids),
        "token_ids": list(rollout.token_ids),
        "action_mask": "".join("1" if agent else "0" for agent in rollout.action_mask),
        "logprobs": list(rollout.logprobs),
        "searches_left": list(rollout.searches_left),
    }


def decode_record(data: Mapping) -> ScoredRollout:
    text = data["rendered_text"]
    segments = ()
    if data.get("format_error") is None:
        try:
            segments = parse_rollout(text).segments
        except FormatError:
            segments = ()
    rollout = Rollout(
        question_id=data["question_id"],
        question_text=data["question_text"],
        segments=segments,
        prompt_ids=tuple(data.get("prompt_ids", ())),
        token_ids=tuple(data.get("token_ids", ())),
        action_mask=tuple(flag == "1" for flag in data.get("action_mask", "")),
        logprobs=tuple(float(v) for v in data.get("logprobs", ())),
        searches_left=tuple(data.get("searches_left", ())),
        temperature=float(data.get("temperature", 1.0)),
        text=text,
        format_error=data.get("format_error"),
    )
    return ScoredRollout(
        rollout=rollout,
        reward=RewardBreakdown.from_dict(data["reward_breakdown"]),
        tool_call_count=int(data["tool_call_count"]),
        iteration_index=int(data["iteration_index"]),
        seed=int(data.get("seed", 0)),
    )


def dumps_line(record: Mapping) -> str:
    return json.dumps(record, sort_keys=True) + "\n"


class FsyncPolicy(Enum):
    ALWAYS = "always"  # fsync after every append
    NO = "no"  # flush only, the OS decides


class RecordLog:
    """Append-only JSONL log with crash-tolerant replay."""

    def __init__(self, path: str | Path, fsync_policy: FsyncPolicy = FsyncPolicy.NO):
        self.path = Path(path)
        self.fsync_policy = fsync_policy
        self._file: TextIOWrapper | None = None
        self._lock = threading.Lock()

    def start(self) -> None:
        with self._lock:
            if self._file is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._file = open(self.path, "a", encoding="utf-8")

    def stop(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.flush()
                if self.fsync_policy == FsyncPolicy.ALWAYS:
                    os.fsync(self._file.fileno())
                self._file.close()
                self._file = None

    def __enter__(self) -> RecordLog:
        self.start()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.stop()

    def append(self, record: Mapping) -> None:
        if self._file is None:
            return

        line = dumps_line(record)
        with self._lock:
            self._file.write(line)
            self._file.flush()
            if self.fsync_policy == FsyncPolicy.ALWAYS:
                os.fsync(self._file.fileno())

    def replay(self, handler: Callable[[dict], None]) -> int:
        """Feed every complete record to ``handler``; return the count.

        Reading stops at the first undecodable or unterminated line and the
        file is truncated back to the last complete record.
        """
        if not self.path.exists():
            return 0

        replayed = 0
        last_valid_position = 0
        with open(self.path, "rb") as f:
            for raw in f:
                if not raw.endswith(b"\n"):
                    break
                try:
                    record = json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    break
                if not isinstance(record, dict):
                    break
                handler(record)
                replayed += 1
                last_valid_position += len(raw)

        if last_valid_position < self.size():
            logger.warning(
                "Truncating corrupt tail of %s at byte %d", self.path, last_valid_position
            )
            with open(self.path, "r+b") as f:
                f.truncate(last_valid_position)

        logger.debug("Replayed %d records from %s", replayed, self.path)
        return replayed

    def size(self) -> int:
        try:
            return os.path.getsize(self.path)
        except OSError:
            return 0


def write_records(records: Iterable[ScoredRollout], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(dumps_line(encode_record(record)))
            count += 1
    return count


def read_records(path: str | Path) -> list[ScoredRollout]:
    records: list[ScoredRollout] = []
    RecordLog(path).replay(lambda data: records.append(decode_record(data)))
    return records


def write_jsonl(rows: Iterable[Mapping], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(dumps_line(row))


def read_jsonl(path: str | Path) -> list[dict]:
    rows: list[dict] = []
    RecordLog(path).replay(rows.append)
    return rows
