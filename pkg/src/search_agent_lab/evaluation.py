"""Held-out evaluation, per-iteration reports and the flat results table."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, EmptyData, EvalOverlap, ReportError
from .grammar import Rollout, count_tool_calls
from .policy import DEFAULT_MAX_TOKENS, PolicyParams, Vocabulary, sample_rollout
from .reward import AnswerMode, score_answer
from .rollout_log import ScoredRollout
from .workers import RolloutWorkers
from .world import DEFAULT_TOP_K, KnowledgeGraph, Question, Split

Agent = Callable[[Question], Rollout]

STAGES = ("sft", "rl")
SPLITS = {"id": Split.EVAL_ID, "ood": Split.EVAL_OOD}
TABLE_COLUMNS = ("iteration", "stage", "split", "accuracy", "mean_tool_calls", "questions")


@dataclass
class EvalConfig:
    max_searches: int = 10
    top_k: int = DEFAULT_TOP_K
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int = 0
    judge_mode: AnswerMode = AnswerMode.JUDGE
    workers: int = 8

    def __post_init__(self) -> None:
        if self.max_searches < 0:
            raise ConfigError("eval.max_searches", "must be >= 0")
        if self.top_k < 1 or self.max_tokens < 1 or self.workers < 1:
            raise ConfigError("eval", "top_k, max_tokens and workers must be >= 1")


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    split: Split
    hop_count: int
    predicted: str
    score: float
    tool_calls: int
    format_valid: bool

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "split": self.split.value,
            "hop_count": self.hop_count,
            "predicted": self.predicted,
            "score": self.score,
            "tool_calls": self.tool_calls,
            "format_valid": self.format_valid,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> EvalRecord:
        return cls(
            question_id=data["question_id"],
            split=Split(data["split"]),
            hop_count=int(data["hop_count"]),
            predicted=data["predicted"],
            score=float(data["score"]),
            tool_calls=int(data["tool_calls"]),
            format_valid=bool(data["format_valid"]),
        )


def tool_call_histogram(counts: Iterable[int]) -> dict[int, int]:
    return dict(sorted(Counter(counts).items()))


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


@dataclass(frozen=True)
class EvalResult:
    records: tuple[EvalRecord, ...]

    def for_split(self, split: Split) -> list[EvalRecord]:
        return [r for r in self.records if r.split is split]

    @property
    def accuracy_id(self) -> float:
        return _mean([r.score for r in self.for_split(Split.EVAL_ID)])

    @property
    def accuracy_ood(self) -> float:
        return _mean([r.score for r in self.for_split(Split.EVAL_OOD)])

    @property
    def mean_tool_calls(self) -> float:
        return _mean([r.tool_calls for r in self.records])

    @property
    def histogram(self) -> dict[int, int]:
        return tool_call_histogram(r.tool_calls for r in self.records)

    def split_row(self, split: Split) -> tuple[float, float, int]:
        records = self.for_split(split)
        accuracy = _mean([r.score for r in records])
        return accuracy, _mean([r.tool_calls for r in records]), len(records)

    def to_dict(self) -> dict:
        return {
            "accuracy_id": self.accuracy_id,
            "accuracy_ood": self.accuracy_ood,
            "mean_tool_calls": self.mean_tool_calls,
            "tool_call_histogram": {str(k): v for k, v in self.histogram.items()},
            "records": [record.to_dict() for record in self.records],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> EvalResult:
        return cls(tuple(EvalRecord.from_dict(r) for r in data["records"]))


class PolicyAgent:
    """Greedy decoding with a fixed search budget."""

    def __init__(
        self, params: PolicyParams, kg: KnowledgeGraph, vocab: Vocabulary, config: EvalConfig
    ) -> None:
        self.params = params
        self.kg = kg
        self.vocab = vocab
        self.config = config

    def __call__(self, question: Question) -> Rollout:
        return sample_rollout(
            self.params,
            question,
            self.kg,
            self.vocab,
            temperature=0.0,
            max_searches=self.config.max_searches,
            seed=self.config.seed,
            top_k=self.config.top_k,
            max_tokens=self.config.max_tokens,
        )


def judge_rollout(
    rollout: Rollout, question: Question, mode: AnswerMode, entities: Sequence[str]
) -> EvalRecord:
    predicted = rollout.answer_text() or ""
    valid = rollout.format_valid
    score = score_answer(predicted, question.gold_answer, mode, entities) if valid else 0.0
    return EvalRecord(
        question_id=question.id,
        split=question.split,
        hop_count=question.hop_count,
        predicted=predicted if valid else "",
        score=score,
        tool_calls=count_tool_calls(rollout),
        format_valid=valid,
    )


def check_disjoint(questions: Iterable[Question], train: Iterable[Question]) -> None:
    ids, paths = set(), set()
    for question in train:
        ids.add(question.id)
        paths.add(question.path_key)
    leaked = [q.id for q in questions if q.id in ids or q.path_key in paths]
    if leaked:
        raise EvalOverlap(leaked)


def evaluate(
    policy: PolicyParams | Agent,
    questions: Sequence[Question],
    kg: KnowledgeGraph,
    vocab: Vocabulary | None = None,
    config: EvalConfig | None = None,
    train: Iterable[Question] | None = None,
) -> EvalResult:
    """One greedy rollout per question, judged independently of the training reward.

    With ``train`` given, any question sharing an id or a gold path with a
    training question raises :class:`EvalOverlap` before a rollout is sampled.
    """
    if not questions:
        raise EmptyData("evaluation questions")
    if train is not None:
        check_disjoint(questions, train)
    config = config or EvalConfig()
    if isinstance(policy, PolicyParams):
        if vocab is None:
            vocab = Vocabulary.from_world(kg)
        agent: Agent = PolicyAgent(policy, kg, vocab, config)
    else:
        agent = policy

    rollouts = RolloutWorkers(config.workers).map(agent, questions)
    entities = kg.entity_names
    records = tuple(
        judge_rollout(rollout, question, config.judge_mode, entities)
        for rollout, question in zip(rollouts, questions)
    )
    return EvalResult(records)


@dataclass
class IterationReport:
    iteration: int
    pool_before: int
    pool_after: int
    filtered: int
    sft_skipped: bool
    sft_loss: float | None
    rl_rewards: list[float]
    rl_tool_call_histogram: dict[int, int]
    sft_eval: EvalResult
    rl_eval: EvalResult
    filter_audit: dict = field(default_factory=dict)

    @property
    def rl_reward_first(self) -> float:
        return self.rl_rewards[0] if self.rl_rewards else 0.0

    @property
    def rl_reward_last(self) -> float:
        return self.rl_rewards[-1] if self.rl_rewards else 0.0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "pool_before": self.pool_before,
            "pool_after": self.pool_after,
            "filtered": self.filtered,
            "filter_audit": dict(self.filter_audit),
            "sft_skipped": self.sft_skipped,
            "sft_loss": self.sft_loss,
            "rl_rewards": list(self.rl_rewards),
            "rl_reward_first": self.rl_reward_first,
            "rl_reward_last": self.rl_reward_last,
            "rl_tool_call_histogram": {
                str(k): v for k, v in sorted(self.rl_tool_call_histogram.items())
            },
            "sft_eval": self.sft_eval.to_dict(),
            "rl_eval": self.rl_eval.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> IterationReport:
        return cls(
            iteration=int(data["iteration"]),
            pool_before=int(data["pool_before"]),
            pool_after=int(data["pool_after"]),
            filtered=int(data["filtered"]),
            sft_skipped=bool(data["sft_skipped"]),
            sft_loss=data["sft_loss"],
            rl_rewards=[float(v) for v in data["rl_rewards"]],
            rl_tool_call_histogram={
                int(k): int(v) for k, v in data["rl_tool_call_histogram"].items()
            },
            sft_eval=EvalResult.from_dict(data["sft_eval"]),
            rl_eval=EvalResult.from_dict(data["rl_eval"]),
            filter_audit=dict(data.get("filter_audit", {})),
        )


def rl_histogram(records: Iterable[ScoredRollout]) -> dict[int, int]:
    return tool_call_histogram(record.tool_call_count for record in records)


def table_rows(reports: Sequence[IterationReport]) -> list[tuple]:
    rows = []
    for report in reports:
        for stage, result in zip(STAGES, (report.sft_eval, report.rl_eval)):
            for name, split in SPLITS.items():
                accuracy, calls, count = result.split_row(split)
                rows.append((report.iteration, stage, name, accuracy, calls, count))
    return rows


def render_table(reports: Sequence[IterationReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for iteration, stage, split, accuracy, calls, count in table_rows(reports):
        writer.writerow((iteration, stage, split, repr(accuracy), repr(calls), count))
    return buffer.getvalue()


def render_summary(reports: Sequence[IterationReport], metadata: Mapping) -> str:
    summary = {
        "metadata": dict(metadata),
        "iterations": [
            {
                "iteration": report.iteration,
                "pool_before": report.pool_before,
                "pool_after": report.pool_after,
                "filtered": report.filtered,
                "sft_skipped": report.sft_skipped,
                "sft_loss": report.sft_loss,
                "rl_reward_first": report.rl_reward_first,
                "rl_reward_last": report.rl_reward_last,
                "rl_tool_call_histogram": {
                    str(k): v for k, v in sorted(report.rl_tool_call_histogram.items())
                },
                "sft": _stage_summary(report.sft_eval),
                "rl": _stage_summary(report.rl_eval),
            }
            for report in reports
        ],
    }
    return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def _stage_summary(result: EvalResult) -> dict:
    return {
        "accuracy_id": result.accuracy_id,
        "accuracy_ood": result.accuracy_ood,
        "mean_tool_calls": result.mean_tool_calls,
        "tool_call_histogram": {str(k): v for k, v in result.histogram.items()},
    }


def emit_report(
    reports: Sequence[IterationReport], metadata: Mapping, out_dir: str | Path
) -> tuple[Path, Path]:
    """Write ``summary.json`` and ``table.csv``; both are byte-stable."""
    out_dir = Path(out_dir)
    summary_path = out_dir / "summary.json"
    table_path = out_dir / "table.csv"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        summary_path.write_text(render_summary(reports, metadata), encoding="utf-8")
        table_path.write_text(render_table(reports), encoding="utf-8")
    except OSError as exc:
        raise ReportError(str(out_dir), exc.strerror or "write failed") from exc
    return summary_path, table_path


def save_iteration_report(report: IterationReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n", "utf-8")


def load_iteration_report(path: str | Path) -> IterationReport:
    return IterationReport.from_dict(json.loads(Path(path).read_text("utf-8")))
