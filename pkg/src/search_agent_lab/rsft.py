"""Rejection-sampling fine-tuning: pool filters and masked supervised training."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    EmptyAgentSequence,
    EmptyData,
    PoolOrderError,
    SnapshotRoleError,
)
from .grammar import Rollout
from .policy import PolicyParams, PolicySnapshot, SnapshotRole, score_rollout
from .rollout_log import ScoredRollout

logger = logging.getLogger(__name__)


@dataclass
class FilterConfig:
    delta: float = 0.7
    top_k: int = 2000

    def __post_init__(self) -> None:
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError("filter.delta", "must lie in [0, 1]")
        if self.top_k < 1:
            raise ConfigError("filter.top_k", "must be >= 1")


@dataclass
class SftConfig:
    learning_rate: float = 0.5
    batch_size: int = 16
    epochs: int = 1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("sft.learning_rate", "must be positive")
        if self.batch_size < 1:
            raise ConfigError("sft.batch_size", "must be >= 1")
        if self.epochs < 0:
            raise ConfigError("sft.epochs", "must be >= 0")


class DataPool:
    """Append-only store of scored rollouts across iterations."""

    def __init__(self, records: Iterable[ScoredRollout] = ()) -> None:
        self._records: list[ScoredRollout] = []
        self.extend(records)

    def extend(self, records: Iterable[ScoredRollout]) -> None:
        for record in records:
            if self._records and record.iteration_index < self._records[-1].iteration_index:
                raise PoolOrderError(self._records[-1].iteration_index, record.iteration_index)
            self._records.append(record)

    @property
    def records(self) -> tuple[ScoredRollout, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def question_ids(self) -> set[str]:
        return {record.question_id for record in self._records}


def _preference(item: tuple[int, ScoredRollout]) -> tuple[int, int, int]:
    # most tool calls, then latest iteration, then earliest position
    position, record = item
    return (-record.tool_call_count, -record.iteration_index, position)


def filter_hrs(records: Sequence[ScoredRollout], delta: float) -> list[ScoredRollout]:
    return [record for record in records if record.reward.total >= delta]


def filter_sqd(records: Sequence[ScoredRollout]) -> list[ScoredRollout]:
    best: dict[str, tuple[int, ScoredRollout]] = {}
    for item in enumerate(records):
        question_id = item[1].question_id
        if question_id not in best or _preference(item) < _preference(best[question_id]):
            best[question_id] = item
    return [record for _, record in best.values()]


def filter_mcs(records: Sequence[ScoredRollout], k: int) -> list[ScoredRollout]:
    if k < 1:
        raise ConfigError("filter.top_k", "must be >= 1")
    ranked = sorted(enumerate(records), key=_preference)
    return [record for _, record in ranked[:k]]


@dataclass(frozen=True)
class FilterAudit:
    pool: int
    after_hrs: int
    after_sqd: int
    after_mcs: int

    @property
    def removed_hrs(self) -> int:
        return self.pool - self.after_hrs

    @property
    def removed_sqd(self) -> int:
        return self.after_hrs - self.after_sqd

    @property
    def removed_mcs(self) -> int:
        return self.after_sqd - self.after_mcs

    def to_dict(self) -> dict:
        return {
            "pool": self.pool,
            "after_hrs": self.after_hrs,
            "after_sqd": self.after_sqd,
            "after_mcs": self.after_mcs,
            "removed_hrs": self.removed_hrs,
            "removed_sqd": self.removed_sqd,
            "removed_mcs": self.removed_mcs,
        }


def filter_pool(
    records: Sequence[ScoredRollout], config: FilterConfig
) -> tuple[list[ScoredRollout], FilterAudit]:
    """HRS, then SQD, then MCS."""
    high_reward = filter_hrs(records, config.delta)
    distinct = filter_sqd(high_reward)
    selected = filter_mcs(distinct, config.top_k)
    audit = FilterAudit(len(records), len(high_reward), len(distinct), len(selected))
    logger.info(
        "Filtered pool of %d: -%d reward, -%d duplicate, -%d top-k, %d kept",
        audit.pool,
        audit.removed_hrs,
        audit.removed_sqd,
        audit.removed_mcs,
        audit.after_mcs,
    )
    return selected, audit


def _rollout(record: ScoredRollout | Rollout) -> Rollout:
    return record.rollout if isinstance(record, ScoredRollout) else record


def sft_loss_and_gradient(
    params: PolicyParams, record: ScoredRollout | Rollout
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the agent tokens and its gradient.

    Observation tokens are context only: they are never prediction targets.
    """
    rollout = _rollout(record)
    count = rollout.agent_token_count
    if count == 0:
        raise EmptyAgentSequence(rollout.question_id)
    score = score_rollout(params, rollout)
    loss = -float(score.logprobs.sum()) / count
    gradient = score.gradient(np.full(count, -1.0 / count))
    return loss, gradient


def mean_sft_loss(params: PolicyParams, data: Sequence[ScoredRollout | Rollout]) -> float:
    if not data:
        raise EmptyData("SFT records")
    losses = []
    for record in data:
        rollout = _rollout(record)
        if rollout.agent_token_count == 0:
            raise EmptyAgentSequence(rollout.question_id)
        losses.append(-float(score_rollout(params, rollout).logprobs.mean()))
    return float(np.mean(losses))


def sft_train(
    base: PolicySnapshot,
    data: Sequence[ScoredRollout | Rollout],
    config: SftConfig,
    seed: int,
) -> PolicyParams:
    """Mini-batch gradient descent from a fresh copy of the base parameters."""
    if base.role is not SnapshotRole.BASE:
        raise SnapshotRoleError(SnapshotRole.BASE.value, base.role.value)
    if not data:
        raise EmptyData("SFT records")

    params = base.params.copy()
    arch = params.arch
    for epoch in range(config.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(data))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [data[i] for i in order[start : start + config.batch_size]]
            gradient = np.zeros(arch.param_count)
            for record in batch:
                loss, record_gradient = sft_loss_and_gradient(params, record)
                gradient += record_gradient
                losses.append(loss)
            params = PolicyParams(
                arch, params.values - config.learning_rate * gradient / len(batch)
            )
        logger.info(
            "SFT epoch %d: mean loss %.4f over %d records", epoch, np.mean(losses), len(data)
        )
    return params
