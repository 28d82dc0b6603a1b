"""Group-relative policy optimization over tool-using rollouts."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    ConfigError,
    EmptyData,
    GroupTooSmall,
    MissingOldLogProbs,
    SnapshotRoleError,
)
from .grammar import count_tool_calls
from .policy import (
    DEFAULT_MAX_TOKENS,
    PolicyParams,
    PolicySnapshot,
    SnapshotRole,
    Vocabulary,
    check_architecture,
    sample_rollout,
    score_rollout,
)
from .reward import AnswerMode, RewardBreakdown, hybrid_reward
from .rollout_log import RecordLog, ScoredRollout
from .workers import RolloutWorkers
from .world import DEFAULT_TOP_K, KnowledgeGraph, Question

logger = logging.getLogger(__name__)


class AdvantageScope(Enum):
    GROUP = "group"
    BATCH = "batch"


@dataclass
class GrpoConfig:
    group_size: int = 8
    clip: float = 0.2
    kl_coefficient: float = 0.0
    learning_rate: float = 0.5
    batch_size: int = 8
    temperature: float = 1.0
    epochs: int = 1
    max_searches: int = 10
    top_k: int = DEFAULT_TOP_K
    max_tokens: int = DEFAULT_MAX_TOKENS
    advantage_scope: AdvantageScope = AdvantageScope.GROUP
    workers: int = 8

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ConfigError("rl.group_size", "must be >= 2")
        if not 0 < self.clip < 1:
            raise ConfigError("rl.clip", "must lie in (0, 1)")
        if self.kl_coefficient < 0:
            raise ConfigError("rl.kl_coefficient", "must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("rl.learning_rate", "must be positive")
        if self.batch_size < 1:
            raise ConfigError("rl.batch_size", "must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("rl.temperature", "must be positive")
        if self.epochs < 0:
            raise ConfigError("rl.epochs", "must be >= 0")
        if self.max_searches < 0:
            raise ConfigError("rl.max_searches", "must be >= 0")
        if self.top_k < 1 or self.max_tokens < 1 or self.workers < 1:
            raise ConfigError("rl", "top_k, max_tokens and workers must be >= 1")


def compute_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Z-score rewards with the population standard deviation.

    Constant rewards give all-zero advantages.
    """
    values = np.asarray(rewards, dtype=np.float64)
    if values.size < 2:
        raise GroupTooSmall(int(values.size))
    if np.all(values == values[0]):
        return np.zeros_like(values)
    return (values - values.mean()) / values.std()


@dataclass
class RolloutGroup:
    question: Question
    rollouts: list
    rewards: list[RewardBreakdown]
    advantages: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if len(self.rollouts) < 2:
            raise GroupTooSmall(len(self.rollouts))
        if len(self.rewards) != len(self.rollouts):
            raise ConfigError("group", "rewards do not align with rollouts")
        if len(self.advantages) == 0:
            self.advantages = compute_advantages([r.total for r in self.rewards])
        elif len(self.advantages) != len(self.rollouts):
            raise ConfigError("group", "advantages do not align with rollouts")

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.rewards])


def normalize_batch(groups: Sequence[RolloutGroup]) -> None:
    """Replace per-group advantages by z-scores over the whole batch."""
    totals = np.concatenate([group.totals for group in groups])
    advantages = compute_advantages(totals)
    offset = 0
    for group in groups:
        group.advantages = advantages[offset : offset + len(group.rollouts)]
        offset += len(group.rollouts)


def grpo_objective_and_gradient(
    params: PolicyParams,
    old: PolicySnapshot,
    ref: PolicySnapshot,
    groups: Sequence[RolloutGroup],
    config: GrpoConfig,
) -> tuple[float, np.ndarray]:
    """Token-level clipped surrogate minus the KL penalty, and its exact gradient.

    Within a group every agent token weighs 1 / (agent tokens in the group);
    the groups that carry agent tokens are averaged. Old log-probabilities
    are the ones recorded when the rollouts were sampled.
    """
    check_architecture(params.arch, old.params.arch, ref.params.arch)
    if old.role is not SnapshotRole.OLD:
        raise SnapshotRoleError(SnapshotRole.OLD.value, old.role.value)
    if ref.role not in (SnapshotRole.REFERENCE, SnapshotRole.BASE):
        raise SnapshotRoleError(SnapshotRole.REFERENCE.value, ref.role.value)

    gradient = np.zeros(params.arch.param_count)
    if not groups:
        return 0.0, gradient

    objective = 0.0
    eps = config.clip
    beta = config.kl_coefficient
    pooled = [(group, sum(r.agent_token_count for r in group.rollouts)) for group in groups]
    # groups without agent tokens drop out of the average
    pooled = [(group, tokens) for group, tokens in pooled if tokens > 0]
    for group, tokens in pooled:
        scale = 1.0 / (tokens * len(pooled))

        for rollout, advantage in zip(group.rollouts, group.advantages):
            if rollout.agent_token_count == 0:
                continue
            if not rollout.logprobs:
                raise MissingOldLogProbs(rollout.question_id)
            mask = np.asarray(rollout.action_mask, dtype=bool)
            old_logp = np.asarray(rollout.logprobs, dtype=np.float64)[mask]

            score = score_rollout(params, rollout)
            ratio = np.exp(score.logprobs - old_logp)
            unclipped = ratio * advantage
            clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage
            surrogate = np.minimum(unclipped, clipped)
            weights = np.where(unclipped <= clipped, unclipped, 0.0)

            if beta > 0:
                ref_logp = score_rollout(ref.params, rollout).logprobs
                surrogate = surrogate - beta * kl_estimate(ref_logp, score.logprobs)
                weights = weights + beta * (np.exp(ref_logp - score.logprobs) - 1.0)

            objective += scale * float(surrogate.sum())
            score.gradient(scale * weights, out=gradient)

    return objective, gradient


def kl_estimate(log_ref: np.ndarray, log_policy: np.ndarray) -> np.ndarray:
    log_rho = np.asarray(log_ref) - np.asarray(log_policy)
    return np.exp(log_rho) - log_rho - 1.0


def derive_seed(seed: int, *counters: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=counters).generate_state(1)[0])


@dataclass
class RlOutcome:
    params: PolicyParams
    records: list[ScoredRollout]
    metrics: list[dict]


def _batch_metrics(
    index: int, groups: Sequence[RolloutGroup], objective: float, gradient: np.ndarray
) -> dict:
    rewards = [reward for group in groups for reward in group.rewards]
    rollouts = [rollout for group in groups for rollout in group.rollouts]
    calls = [count_tool_calls(rollout) for rollout in rollouts]
    return {
        "batch": index,
        "questions": len(groups),
        "mean_reward": float(np.mean([r.total for r in rewards])),
        "format_rate": float(np.mean([r.format_reward for r in rewards])),
        "mean_tool_calls": float(np.mean(calls)),
        "objective": float(objective),
        "grad_norm": float(np.linalg.norm(gradient)),
    }


def rl_train(
    base: PolicyParams,
    shard: Sequence[Question],
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    mode: AnswerMode,
    config: GrpoConfig,
    seed: int,
    iteration_index: int = 0,
    metrics_log: RecordLog | None = None,
    progress: bool = False,
) -> RlOutcome:
    """One RL stage: batches of questions, G rollouts each, one ascent step per batch.

    The reference snapshot is ``base`` for the whole call. Every sampled
    rollout is returned as a scored record tagged with ``iteration_index``.
    """
    if not shard:
        raise EmptyData("RL questions")

    ref = PolicySnapshot.capture(base, SnapshotRole.REFERENCE)
    params = base.copy()
    entities = kg.entity_names
    workers = RolloutWorkers(config.workers, progress=progress)
    records: list[ScoredRollout] = []
    metrics: list[dict] = []
    batch_index = 0

    for epoch in range(config.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(shard))
        for start in range(0, len(order), config.batch_size):
            batch = [shard[i] for i in order[start : start + config.batch_size]]
            old = PolicySnapshot.capture(params, SnapshotRole.OLD)

            jobs = [
                (question, derive_seed(seed, epoch, batch_index, number, member))
                for number, question in enumerate(batch)
                for member in range(config.group_size)
            ]

            def sample(job: tuple[Question, int], policy: PolicyParams = old.params):
                question, job_seed = job
                return sample_rollout(
                    policy,
                    question,
                    kg,
                    vocab,
                    temperature=config.temperature,
                    max_searches=config.max_searches,
                    seed=job_seed,
                    top_k=config.top_k,
                    max_tokens=config.max_tokens,
                )

            rollouts = workers.map(sample, jobs, desc=f"batch {batch_index}")

            groups = []
            for number, question in enumerate(batch):
                members = rollouts[number * config.group_size : (number + 1) * config.group_size]
                rewards = [
                    hybrid_reward(r.rendered_text(), question.gold_answer, mode, entities)
                    for r in members
                ]
                groups.append(RolloutGroup(question, members, rewards))
            if config.advantage_scope is AdvantageScope.BATCH:
                normalize_batch(groups)

            objective, gradient = grpo_objective_and_gradient(params, old, ref, groups, config)
            params = PolicyParams(params.arch, params.values + config.learning_rate * gradient)

            rewards = [reward for group in groups for reward in group.rewards]
            for (_, job_seed), rollout, reward in zip(jobs, rollouts, rewards):
                records.append(ScoredRollout.score(rollout, reward, iteration_index, job_seed))

            row = _batch_metrics(batch_index, groups, objective, gradient)
            row["iteration"] = iteration_index
            metrics.append(row)
            if metrics_log is not None:
                metrics_log.append(row)
            logger.info(
                "RL batch %d: reward %.3f format %.3f calls %.2f objective %.4f",
                batch_index,
                row["mean_reward"],
                row["format_rate"],
                row["mean_tool_calls"],
                objective,
            )
            batch_index += 1

    return RlOutcome(params, records, metrics)
