"""The self-evolution loop: filter the pool, fine-tune from Base, RL on the next shard.

Run directory layout::

    run/
      config.yaml  world.json  train.jsonl  eval-id.jsonl  eval-ood.jsonl  base.ckpt
      001/  filtered.jsonl  sft.ckpt  rl.ckpt  pool-delta.jsonl  rl-metrics.jsonl
            report.json  DONE
      002/  ...
      summary.json  table.csv

An iteration is built in ``.NNN.tmp/`` and renamed once ``DONE`` is written,
so a crash never leaves a half-written iteration directory behind.
"""

from __future__ import annotations

import dataclasses
import logging
import shutil
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import EvolveConfig, load_config, save_config
from .errors import ConfigError, TooFewQuestions
from .evaluation import (
    IterationReport,
    emit_report,
    evaluate,
    load_iteration_report,
    rl_histogram,
    save_iteration_report,
)
from .grpo import derive_seed, rl_train
from .policy import PolicyParams, PolicySnapshot, SnapshotRole, Vocabulary
from .rollout_log import RecordLog, read_records, write_records
from .rsft import DataPool, filter_pool, mean_sft_loss, sft_train
from .warmup import build_base_policy
from .world import (
    KnowledgeGraph,
    Question,
    Split,
    generate_questions,
    generate_world,
    load_questions,
    load_world,
    save_questions,
    save_world,
)

logger = logging.getLogger(__name__)

DONE_MARKER = "DONE"
CONFIG_SNAPSHOT = "config.yaml"

# stage counters for derive_seed
_TRAIN_QUESTIONS, _EVAL_ID, _EVAL_OOD, _WARMUP, _SFT, _RL = range(6)


def sft_seed(config: EvolveConfig, index: int) -> int:
    return derive_seed(config.seed, index, _SFT)


def rl_seed(config: EvolveConfig, index: int) -> int:
    return derive_seed(config.seed, index, _RL)


def record_config(config: EvolveConfig, path: Path) -> None:
    """Write the run's config snapshot once; a later run must match it.

    ``run_dir`` and ``progress`` do not change what a run computes and are
    ignored in the comparison.
    """
    if not path.exists():
        save_config(config, path)
        return
    recorded = dataclasses.replace(
        load_config(path), run_dir=config.run_dir, progress=config.progress
    )
    if recorded != config:
        raise ConfigError(str(path), "run directory was created with a different configuration")


def split_shards(questions: Sequence[Question], n: int, seed: int) -> list[list[Question]]:
    """Seeded shuffle, then a contiguous split into sizes that differ by at most one."""
    if n < 1:
        raise ConfigError("iterations", "must be >= 1")
    if len(questions) < n:
        raise TooFewQuestions(len(questions), n)

    order = np.random.default_rng(seed).permutation(len(questions))
    size, extra = divmod(len(questions), n)
    shards = []
    start = 0
    for index in range(n):
        stop = start + size + (1 if index < extra else 0)
        shards.append(
            [dataclasses.replace(questions[i], shard=index + 1) for i in order[start:stop]]
        )
        start = stop
    return shards


@dataclass
class Workspace:
    config: EvolveConfig
    run_dir: Path
    kg: KnowledgeGraph
    vocab: Vocabulary
    train: list[Question]
    eval_id: list[Question]
    eval_ood: list[Question]
    shards: list[list[Question]]
    base: PolicySnapshot

    @property
    def eval_questions(self) -> list[Question]:
        return self.eval_id + self.eval_ood


def _questions(path: Path, make) -> list[Question]:
    if path.exists():
        return load_questions(path)
    questions = make()
    save_questions(questions, path)
    return questions


def prepare(config: EvolveConfig, run_dir: str | Path | None = None) -> Workspace:
    """Load or create the world, question sets and base policy under the run directory."""
    run_dir = Path(run_dir or config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    record_config(config, run_dir / CONFIG_SNAPSHOT)
    world = config.world

    world_path = run_dir / "world.json"
    if world_path.exists():
        kg = load_world(world_path)
    else:
        kg = generate_world(world.seed, world.n_entities, world.n_relations)
        save_world(kg, world_path)

    train = _questions(
        run_dir / "train.jsonl",
        lambda: generate_questions(
            kg,
            world.hop_mix,
            world.train_questions,
            Split.TRAIN,
            derive_seed(world.seed, _TRAIN_QUESTIONS),
        ),
    )
    eval_id = _questions(
        run_dir / "eval-id.jsonl",
        lambda: generate_questions(
            kg,
            world.hop_mix,
            world.eval_id_questions,
            Split.EVAL_ID,
            derive_seed(world.seed, _EVAL_ID),
            exclude={q.path_key for q in train},
        ),
    )
    eval_ood = _questions(
        run_dir / "eval-ood.jsonl",
        lambda: generate_questions(
            kg,
            world.hop_mix,
            world.eval_ood_questions,
            Split.EVAL_OOD,
            derive_seed(world.seed, _EVAL_OOD),
        ),
    )

    vocab = Vocabulary.from_world(kg)
    arch = config.policy.arch(len(vocab))
    base_path = run_dir / "base.ckpt"
    if base_path.exists():
        base_params = load_checkpoint(base_path, arch)
    else:
        base_params = build_base_policy(
            kg, vocab, train, arch, config.warmup, derive_seed(config.seed, _WARMUP)
        )
        save_checkpoint(base_params, base_path)

    shards = split_shards(train, config.iterations, config.shard_seed)
    logger.info(
        "Workspace %s: %d entities, %d train / %d id / %d ood questions, %d shards",
        run_dir,
        len(kg.entities),
        len(train),
        len(eval_id),
        len(eval_ood),
        len(shards),
    )
    return Workspace(
        config,
        run_dir,
        kg,
        vocab,
        train,
        eval_id,
        eval_ood,
        shards,
        PolicySnapshot.capture(base_params, SnapshotRole.BASE),
    )


def iteration_dir(root: Path, index: int) -> Path:
    return root / f"{index:03d}"


def run_iteration(
    index: int,
    workspace: Workspace,
    pool: DataPool,
    shard: Sequence[Question] | None = None,
    root: Path | None = None,
) -> tuple[PolicyParams, DataPool, IterationReport]:
    """Filter, SFT from Base (skipped on an empty corpus), RL on the shard, evaluate."""
    config = workspace.config
    if shard is None:
        if not 1 <= index <= len(workspace.shards):
            raise ConfigError("iteration", f"{index} outside 1..{len(workspace.shards)}")
        shard = workspace.shards[index - 1]
    root = root or workspace.run_dir
    staging = root / f".{index:03d}.tmp"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)

    logger.info("Iteration %d: pool %d, shard %d", index, len(pool), len(shard))
    pool_before = len(pool)
    filtered, audit = filter_pool(pool.records, config.filter)
    write_records(filtered, staging / "filtered.jsonl")

    base = workspace.base
    if filtered:
        sft_params = sft_train(base, filtered, config.sft, sft_seed(config, index))
        sft_loss = mean_sft_loss(sft_params, filtered)
        logger.info("Iteration %d: SFT on %d records, loss %.4f", index, len(filtered), sft_loss)
    else:
        sft_params = base.params.copy()
        sft_loss = None
        logger.info("Iteration %d: empty corpus, RL starts from Base", index)
    save_checkpoint(sft_params, staging / "sft.ckpt")

    with RecordLog(staging / "rl-metrics.jsonl") as metrics_log:
        outcome = rl_train(
            sft_params,
            shard,
            workspace.kg,
            workspace.vocab,
            config.answer_mode,
            config.rl,
            rl_seed(config, index),
            iteration_index=index,
            metrics_log=metrics_log,
            progress=config.progress,
        )
    save_checkpoint(outcome.params, staging / "rl.ckpt")
    write_records(outcome.records, staging / "pool-delta.jsonl")
    pool.extend(outcome.records)

    questions = workspace.eval_questions
    kg, vocab, train = workspace.kg, workspace.vocab, workspace.train
    sft_eval = evaluate(sft_params, questions, kg, vocab, config.eval, train=train)
    rl_eval = evaluate(outcome.params, questions, kg, vocab, config.eval, train=train)
    report = IterationReport(
        iteration=index,
        pool_before=pool_before,
        pool_after=len(pool),
        filtered=len(filtered),
        sft_skipped=not filtered,
        sft_loss=sft_loss,
        rl_rewards=[row["mean_reward"] for row in outcome.metrics],
        rl_tool_call_histogram=rl_histogram(outcome.records),
        sft_eval=sft_eval,
        rl_eval=rl_eval,
        filter_audit=audit.to_dict(),
    )
    save_iteration_report(report, staging / "report.json")
    (staging / DONE_MARKER).write_text("", encoding="utf-8")

    final = iteration_dir(root, index)
    if final.exists():
        shutil.rmtree(final)
    staging.rename(final)
    logger.info(
        "Iteration %d done: SFT id %.3f ood %.3f, RL id %.3f ood %.3f",
        index,
        sft_eval.accuracy_id,
        sft_eval.accuracy_ood,
        rl_eval.accuracy_id,
        rl_eval.accuracy_ood,
    )
    return outcome.params, pool, report


@dataclass
class EvolveResult:
    params: PolicyParams
    reports: list[IterationReport] = field(default_factory=list)
    pool: DataPool = field(default_factory=DataPool)


def _resume(
    directory: Path, workspace: Workspace, pool: DataPool
) -> tuple[PolicyParams, IterationReport]:
    pool.extend(read_records(directory / "pool-delta.jsonl"))
    params = load_checkpoint(directory / "rl.ckpt", workspace.base.params.arch)
    return params, load_iteration_report(directory / "report.json")


def _metadata(workspace: Workspace, mode: str) -> dict:
    config = workspace.config
    return {
        "mode": mode,
        "iterations": config.iterations,
        "seed": config.seed,
        "answer_mode": config.answer_mode.value,
        "group_size": config.rl.group_size,
        "world_seed": config.world.seed,
        "entities": len(workspace.kg.entities),
        "train_questions": len(workspace.train),
        "eval_id_questions": len(workspace.eval_id),
        "eval_ood_questions": len(workspace.eval_ood),
    }


def evolve(config: EvolveConfig) -> EvolveResult:
    """Run iterations 1..N, resuming after the last completed one."""
    workspace = prepare(config)
    pool = DataPool()
    reports: list[IterationReport] = []
    params = workspace.base.params

    for index in range(1, config.iterations + 1):
        directory = iteration_dir(workspace.run_dir, index)
        if (directory / DONE_MARKER).exists():
            params, report = _resume(directory, workspace, pool)
            reports.append(report)
            logger.info("Resumed iteration %d from %s", index, directory)
            continue
        params, pool, report = run_iteration(index, workspace, pool)
        reports.append(report)

    emit_report(reports, _metadata(workspace, "evolve"), workspace.run_dir)
    return EvolveResult(params, reports, pool)


def rl_only(config: EvolveConfig) -> EvolveResult:
    """Baseline: a single RL stage from Base over every training question."""
    workspace = prepare(config)
    root = workspace.run_dir / "rl-only"
    pool = DataPool()
    directory = iteration_dir(root, 1)
    if (directory / DONE_MARKER).exists():
        params, report = _resume(directory, workspace, pool)
    else:
        shard = [question for shard in workspace.shards for question in shard]
        params, pool, report = run_iteration(1, workspace, pool, shard=shard, root=root)
    emit_report([report], _metadata(workspace, "rl-only"), root)
    return EvolveResult(params, [report], pool)
