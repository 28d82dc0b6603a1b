from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from collections.abc import Callable
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import EvolveConfig, load_config, parse_hop_mix
from .errors import LabError
from .evaluation import emit_report, evaluate, load_iteration_report
from .grpo import rl_train
from .orchestrator import DONE_MARKER, evolve, rl_only
from .policy import PolicySnapshot, SnapshotRole, Vocabulary
from .reward import AnswerMode
from .rollout_log import RecordLog, read_records, write_records
from .rsft import FilterConfig, filter_pool, sft_train
from .warmup import build_base_policy
from .world import (
    DEFAULT_HOP_MIX,
    Split,
    generate_questions,
    generate_world,
    load_questions,
    load_world,
    save_questions,
    save_world,
)

logger = logging.getLogger(__name__)


def _config(args: argparse.Namespace) -> EvolveConfig:
    return load_config(args.config) if args.config else EvolveConfig()


def _policy(args: argparse.Namespace, config: EvolveConfig):
    kg = load_world(args.world)
    vocab = Vocabulary.from_world(kg)
    params = load_checkpoint(args.ckpt, config.policy.arch(len(vocab)))
    return kg, vocab, params


def cmd_gen_world(args: argparse.Namespace) -> int:
    kg = generate_world(args.seed, args.entities, args.relations)
    save_world(kg, args.out)
    print(f"{len(kg.entities)} entities, {len(kg.triples)} triples -> {args.out}")
    return 0


def cmd_gen_questions(args: argparse.Namespace) -> int:
    kg = load_world(args.world)
    mix = parse_hop_mix("--mix", args.mix) if args.mix else dict(DEFAULT_HOP_MIX)
    exclude = set()
    for path in args.exclude:
        exclude |= {q.path_key for q in load_questions(path)}
    questions = generate_questions(kg, mix, args.n, Split(args.split), args.seed, exclude)
    save_questions(questions, args.out)
    print(f"{len(questions)} {args.split} questions -> {args.out}")
    return 0


def cmd_warmup(args: argparse.Namespace) -> int:
    config = _config(args)
    kg = load_world(args.world)
    vocab = Vocabulary.from_world(kg)
    questions = load_questions(args.questions)
    arch = config.policy.arch(len(vocab))
    params = build_base_policy(kg, vocab, questions, arch, config.warmup, args.seed)
    save_checkpoint(params, args.out)
    print(f"base policy ({arch.param_count} parameters) -> {args.out}")
    return 0


def cmd_train_rl(args: argparse.Namespace) -> int:
    config = _config(args)
    kg, vocab, params = _policy(args, config)
    shard = load_questions(args.shard)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with RecordLog(out / "rl-metrics.jsonl") as metrics_log:
        outcome = rl_train(
            params,
            shard,
            kg,
            vocab,
            config.answer_mode,
            config.rl,
            args.seed,
            iteration_index=args.iteration,
            metrics_log=metrics_log,
            progress=config.progress,
        )
    save_checkpoint(outcome.params, out / "rl.ckpt")
    write_records(outcome.records, out / "rollouts.jsonl")
    print(f"{len(outcome.records)} rollouts over {len(outcome.metrics)} batches -> {out}")
    return 0


def cmd_train_sft(args: argparse.Namespace) -> int:
    config = _config(args)
    _, _, params = _policy(args, config)
    data = read_records(args.data)
    base = PolicySnapshot.capture(params, SnapshotRole.BASE)
    trained = sft_train(base, data, config.sft, args.seed)
    save_checkpoint(trained, args.out)
    print(f"SFT on {len(data)} records -> {args.out}")
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    config = _config(args)
    filter_config = FilterConfig(
        delta=config.filter.delta if args.delta is None else args.delta,
        top_k=config.filter.top_k if args.top_k is None else args.top_k,
    )
    records = []
    for path in args.pool:
        records += read_records(path)
    selected, audit = filter_pool(records, filter_config)
    write_records(selected, args.out)
    print(json.dumps(audit.to_dict(), sort_keys=True))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    eval_config = dataclasses.replace(config.eval, seed=args.seed)
    if args.judge_mode:
        eval_config = dataclasses.replace(eval_config, judge_mode=AnswerMode(args.judge_mode))
    kg, vocab, params = _policy(args, config)
    questions = []
    for path in args.questions:
        questions += load_questions(path)
    train = [q for path in args.train for q in load_questions(path)]
    result = evaluate(params, questions, kg, vocab, eval_config, train=train or None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_dict(), sort_keys=True, indent=1) + "\n", "utf-8")
    print(
        f"id {result.accuracy_id:.3f} ood {result.accuracy_ood:.3f} "
        f"tool calls {result.mean_tool_calls:.2f} -> {out}"
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run = Path(args.run)
    reports = [
        load_iteration_report(directory / "report.json")
        for directory in sorted(run.iterdir())
        if directory.is_dir() and (directory / DONE_MARKER).exists()
    ]
    summary, table = emit_report(reports, {"run": str(run)}, args.out or run)
    print(f"{len(reports)} iterations -> {summary}, {table}")
    return 0


def cmd_evolve(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.run_dir:
        config = dataclasses.replace(config, run_dir=args.run_dir)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    result = rl_only(config) if args.rl_only else evolve(config)
    for report in result.reports:
        print(
            f"iteration {report.iteration}: "
            f"SFT id {report.sft_eval.accuracy_id:.3f} ood {report.sft_eval.accuracy_ood:.3f} | "
            f"RL id {report.rl_eval.accuracy_id:.3f} ood {report.rl_eval.accuracy_ood:.3f} | "
            f"pool {report.pool_after}"
        )
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "gen-world": cmd_gen_world,
    "gen-questions": cmd_gen_questions,
    "warmup": cmd_warmup,
    "train-rl": cmd_train_rl,
    "train-sft": cmd_train_sft,
    "filter": cmd_filter,
    "eval": cmd_eval,
    "report": cmd_report,
    "evolve": cmd_evolve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="search-lab")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a seeded knowledge graph")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--relations", type=int, default=8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-questions", help="sample multi-hop questions")
    p.add_argument("--world", required=True)
    p.add_argument("--split", choices=[s.value for s in Split], default=Split.TRAIN.value)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mix", help="hop mix, e.g. '{1: 0.25, 2: 0.375, 3: 0.375}'")
    p.add_argument("--exclude", nargs="*", default=[], help="question files to stay disjoint from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("warmup", help="build the format-warmed base policy")
    p.add_argument("--world", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-rl", help="one RL stage on a question shard")
    p.add_argument("--world", required=True)
    p.add_argument("--shard", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iteration", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-sft", help="fine-tune a base checkpoint on filtered rollouts")
    p.add_argument("--world", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("filter", help="apply the reward, dedup and top-k filters")
    p.add_argument("--pool", nargs="+", required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--world", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--questions", nargs="+", required=True)
    p.add_argument("--train", nargs="*", default=[], help="training files the questions must avoid")
    p.add_argument("--config")
    p.add_argument("--judge-mode", choices=[m.value for m in AnswerMode])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="aggregate iteration reports into summary and table")
    p.add_argument("--run", required=True)
    p.add_argument("--out")

    p = sub.add_parser("evolve", help="run the full self-evolution loop")
    p.add_argument("--config")
    p.add_argument("--run-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--rl-only", action="store_true", help="single RL stage baseline")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except LabError as exc:
        print(exc.message, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
