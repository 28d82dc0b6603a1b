from __future__ import annotations

import numpy as np
import pytest

from search_agent_lab.errors import (
    ConfigError,
    EmptyAgentSequence,
    EmptyData,
    PoolOrderError,
    SnapshotRoleError,
)
from search_agent_lab.grammar import Rollout
from search_agent_lab.policy import PolicyParams, PolicySnapshot, SnapshotRole
from search_agent_lab.reward import AnswerMode, RewardBreakdown
from search_agent_lab.rollout_log import ScoredRollout
from search_agent_lab.rsft import (
    DataPool,
    FilterConfig,
    SftConfig,
    filter_hrs,
    filter_mcs,
    filter_pool,
    filter_sqd,
    mean_sft_loss,
    sft_loss_and_gradient,
    sft_train,
)
from tests.helpers import assert_gradient_matches, random_token_rollout, small_arch


def scored(question: str, total: float, calls: int, iteration: int = 1) -> ScoredRollout:
    answer = 2 * total - 1 if total else 0.0
    breakdown = RewardBreakdown(float(total > 0), answer, total, AnswerMode.JUDGE, total > 0)
    return ScoredRollout(Rollout(question_id=question), breakdown, calls, iteration)


def random_pool(rng: np.random.Generator) -> list[ScoredRollout]:
    size = int(rng.integers(0, 101))
    iterations = np.sort(rng.integers(1, 4, size=size))
    return [
        scored(
            f"q{rng.integers(0, 15)}",
            float(rng.choice([0.0, 0.5, 1.0])),
            int(rng.integers(0, 5)),
            int(iteration),
        )
        for iteration in iterations
    ]


def brute_force(records: list[ScoredRollout], delta: float, k: int) -> list[ScoredRollout]:
    """Reference composition written without the library's sort keys."""
    kept = []
    for record in records:
        if record.reward.total >= delta:
            kept.append(record)

    chosen: dict[str, int] = {}
    for index, record in enumerate(kept):
        current = chosen.get(record.question_id)
        if current is None:
            chosen[record.question_id] = index
            continue
        best = kept[current]
        if record.tool_call_count > best.tool_call_count or (
            record.tool_call_count == best.tool_call_count
            and record.iteration_index > best.iteration_index
        ):
            chosen[record.question_id] = index
    first_seen = []
    for record in kept:
        if record.question_id not in first_seen:
            first_seen.append(record.question_id)
    distinct = [kept[chosen[question]] for question in first_seen]

    remaining = list(range(len(distinct)))
    top = []
    while remaining and len(top) < k:
        best = remaining[0]
        for index in remaining[1:]:
            a, b = distinct[index], distinct[best]
            if (a.tool_call_count, a.iteration_index) > (b.tool_call_count, b.iteration_index):
                best = index
        top.append(distinct[best])
        remaining.remove(best)
    return top


def test_hrs_threshold() -> None:
    pool = [scored("a", 0.0, 1), scored("b", 0.5, 1), scored("c", 1.0, 1)]
    assert [r.question_id for r in filter_hrs(pool, 0.7)] == ["c"]
    assert [r.question_id for r in filter_hrs(pool, 0.5)] == ["b", "c"]


def test_sqd_prefers_most_calls_then_latest() -> None:
    pool = [
        scored("a", 1.0, 1, 1),
        scored("b", 1.0, 2, 1),
        scored("a", 1.0, 3, 1),
        scored("a", 1.0, 3, 2),
        scored("a", 1.0, 3, 2),
    ]
    result = filter_sqd(pool)
    assert [r.question_id for r in result] == ["a", "b"]
    assert result[0] is pool[3]


def test_mcs_counts_example() -> None:
    pool = [scored("a", 1.0, 5), scored("b", 1.0, 3), scored("c", 1.0, 3), scored("d", 1.0, 1)]
    assert [r.question_id for r in filter_mcs(pool, 2)] == ["a", "b"]
    with pytest.raises(ConfigError):
        filter_mcs(pool, 0)


def test_pipeline_matches_brute_force() -> None:
    rng = np.random.default_rng(0)
    for _ in range(200):
        pool = random_pool(rng)
        delta = float(rng.choice([0.0, 0.5, 0.7, 1.0]))
        k = int(rng.integers(1, 20))
        selected, audit = filter_pool(pool, FilterConfig(delta=delta, top_k=k))
        expected = brute_force(pool, delta, k)
        assert [id(r) for r in selected] == [id(r) for r in expected]
        assert audit.pool == len(pool)
        assert audit.after_mcs == len(selected)
        removed = audit.removed_hrs + audit.removed_sqd + audit.removed_mcs
        assert removed == len(pool) - len(selected)


def test_filters_are_idempotent() -> None:
    rng = np.random.default_rng(1)
    for _ in range(200):
        pool = random_pool(rng)
        once = filter_hrs(pool, 0.5)
        assert [id(r) for r in filter_hrs(once, 0.5)] == [id(r) for r in once]
        distinct = filter_sqd(pool)
        assert [id(r) for r in filter_sqd(distinct)] == [id(r) for r in distinct]


def test_judge_threshold_keeps_only_full_reward() -> None:
    rng = np.random.default_rng(2)
    pool = random_pool(rng) + random_pool(rng)
    assert all(r.reward.total == 1.0 for r in filter_hrs(pool, 0.7))


def test_data_pool_is_append_only() -> None:
    pool = DataPool([scored("a", 1.0, 0, 1)])
    pool.extend([scored("b", 1.0, 0, 2)])
    assert len(pool) == 2
    assert pool.question_ids() == {"a", "b"}
    with pytest.raises(PoolOrderError):
        pool.extend([scored("c", 1.0, 0, 1)])
    with pytest.raises(ConfigError):
        FilterConfig(delta=1.5)


def test_sft_loss_at_zero_params_is_log_vocab() -> None:
    arch = small_arch()
    rng = np.random.default_rng(3)
    rollout = random_token_rollout(rng, arch.vocab_size, observation=(4, 7), with_budget=False)
    loss, _ = sft_loss_and_gradient(PolicyParams.zeros(arch), rollout)
    assert loss == pytest.approx(np.log(arch.vocab_size), abs=1e-12)


def test_sft_gradient_matches_finite_differences() -> None:
    arch = small_arch()
    rng = np.random.default_rng(4)
    for instance in range(20):
        params = PolicyParams.initialize(arch, seed=instance, scale=0.5)
        rollout = random_token_rollout(rng, arch.vocab_size, length=10, observation=(3, 6))

        def loss(p: PolicyParams, rollout=rollout) -> float:
            return sft_loss_and_gradient(p, rollout)[0]

        assert_gradient_matches(loss, params, sft_loss_and_gradient(params, rollout)[1])


def test_observation_rewrites_do_not_change_the_loss() -> None:
    arch = small_arch()
    window = arch.context_window
    rng = np.random.default_rng(5)
    for instance in range(20):
        params = PolicyParams.initialize(arch, seed=instance, scale=0.5)
        start, stop = 5, 15
        rollout = random_token_rollout(
            rng, arch.vocab_size, length=22, observation=(start, stop), with_budget=False
        )
        tokens = list(rollout.token_ids)
        # observation tokens outside every agent token's window
        for index in range(start, stop - window):
            tokens[index] = int(rng.integers(arch.vocab_size))
        rewritten = Rollout(
            prompt_ids=rollout.prompt_ids,
            token_ids=tuple(tokens),
            action_mask=rollout.action_mask,
        )
        loss, gradient = sft_loss_and_gradient(params, rollout)
        new_loss, new_gradient = sft_loss_and_gradient(params, rewritten)
        assert new_loss == loss
        assert np.array_equal(new_gradient, gradient)
        assert mean_sft_loss(params, [rewritten]) == mean_sft_loss(params, [rollout])


def test_observation_tokens_are_not_targets() -> None:
    arch = small_arch()
    rng = np.random.default_rng(6)
    rollout = random_token_rollout(rng, arch.vocab_size, length=9, observation=(2, 8))
    params = PolicyParams.initialize(arch, seed=1, scale=0.5)
    loss, _ = sft_loss_and_gradient(params, rollout)
    agent_only = [i for i, agent in enumerate(rollout.action_mask) if agent]
    assert agent_only == [0, 1, 8]
    assert loss == pytest.approx(mean_sft_loss(params, [rollout]), rel=1e-12)
    with pytest.raises(EmptyAgentSequence):
        sft_loss_and_gradient(params, Rollout(token_ids=(1, 2), action_mask=(False, False)))


def test_single_step_decreases_loss() -> None:
    arch = small_arch()
    rng = np.random.default_rng(7)
    rollout = random_token_rollout(rng, arch.vocab_size, with_budget=False)
    params = PolicyParams.initialize(arch, seed=2, scale=0.5)
    base = PolicySnapshot.capture(params, SnapshotRole.BASE)
    trained = sft_train(base, [rollout], SftConfig(learning_rate=0.05, batch_size=1, epochs=1), 0)
    assert mean_sft_loss(trained, [rollout]) < mean_sft_loss(base.params, [rollout])
    assert np.array_equal(base.params.values, params.values)


def test_sft_train_contract() -> None:
    arch = small_arch()
    rng = np.random.default_rng(8)
    data = [random_token_rollout(rng, arch.vocab_size) for _ in range(5)]
    params = PolicyParams.initialize(arch, seed=3, scale=0.2)
    base = PolicySnapshot.capture(params, SnapshotRole.BASE)
    config = SftConfig(learning_rate=0.2, batch_size=2, epochs=2)
    first = sft_train(base, data, config, seed=9)
    second = sft_train(base, data, config, seed=9)
    assert first.values.tobytes() == second.values.tobytes()
    assert mean_sft_loss(first, data) < mean_sft_loss(params, data)
    with pytest.raises(SnapshotRoleError):
        sft_train(PolicySnapshot.capture(params, SnapshotRole.OLD), data, config, 0)
    with pytest.raises(EmptyData):
        sft_train(base, [], config, 0)
