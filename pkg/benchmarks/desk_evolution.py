"""Desk-scale acceptance runs: iteration gains, evolve vs RL-only, determinism.

Usage::

    python benchmarks/desk_evolution.py --seeds 0 1 2 3 4 --runs benchmarks/runs
"""

import argparse
import dataclasses
import filecmp
import gc
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path
from typing import Any

import psutil

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))

from search_agent_lab.config import EvolveConfig, load_config  # noqa: E402
from search_agent_lab.orchestrator import evolve, rl_only  # noqa: E402

DESK_CONF = Path(__file__).resolve().parents[1] / "configs" / "desk.conf"

ITERATION_GAIN = 0.02
SFT_SLACK = 0.01
RL_ONLY_SLACK = 0.01


class DeskEvolutionBenchmark:
    def __init__(self, seeds: list[int], runs: Path, config_path: Path = DESK_CONF):
        self.seeds = seeds
        self.runs = runs
        self.base_config = load_config(config_path)
        self.process = psutil.Process()
        self.memory_samples: list[dict[str, float]] = []

    def seeded(self, seed: int, run_dir: Path) -> EvolveConfig:
        world = dataclasses.replace(self.base_config.world, seed=seed)
        return dataclasses.replace(
            self.base_config, seed=seed, shard_seed=seed, world=world, run_dir=str(run_dir)
        )

    def sample_memory(self, label: str) -> None:
        gc.collect()
        self.memory_samples.append(
            {"label": label, "rss_mb": self.process.memory_info().rss / 1024 / 1024}
        )

    def run_evolve(self, seed: int, name: str = "evolve") -> dict[str, Any]:
        print(f"Seed {seed}: self-evolution ({name})...")
        start = time.perf_counter()
        result = evolve(self.seeded(seed, self.runs / f"seed-{seed}" / name))
        self.sample_memory(f"seed-{seed}-{name}")
        reports = result.reports
        return {
            "seconds": time.perf_counter() - start,
            "rl_id": [r.rl_eval.accuracy_id for r in reports],
            "rl_ood": [r.rl_eval.accuracy_ood for r in reports],
            "sft_id": [r.sft_eval.accuracy_id for r in reports],
            "sft_ood": [r.sft_eval.accuracy_ood for r in reports],
            "rl_reward_first": [r.rl_reward_first for r in reports],
            "rl_reward_last": [r.rl_reward_last for r in reports],
            "rl_mean_tool_calls": [r.rl_eval.mean_tool_calls for r in reports],
        }

    def run_rl_only(self, seed: int) -> dict[str, Any]:
        print(f"Seed {seed}: RL-only baseline...")
        config = self.seeded(seed, self.runs / f"seed-{seed}" / "evolve")
        start = time.perf_counter()
        result = rl_only(config)
        self.sample_memory(f"seed-{seed}-rl-only")
        (report,) = result.reports
        return {
            "seconds": time.perf_counter() - start,
            "rl_id": report.rl_eval.accuracy_id,
            "rl_ood": report.rl_eval.accuracy_ood,
        }

    def iteration_gains(self, evolved: dict[int, dict[str, Any]]) -> dict[str, Any]:
        rl_first = statistics.median(run["rl_id"][0] for run in evolved.values())
        rl_last = statistics.median(run["rl_id"][-1] for run in evolved.values())
        sft_prev = statistics.median(run["sft_id"][-2] for run in evolved.values())
        sft_last = statistics.median(run["sft_id"][-1] for run in evolved.values())
        return {
            "median_rl_first": rl_first,
            "median_rl_last": rl_last,
            "median_sft_previous": sft_prev,
            "median_sft_last": sft_last,
            "rl_improves": rl_last >= rl_first + ITERATION_GAIN,
            "sft_holds": sft_last >= sft_prev - SFT_SLACK,
        }

    def against_rl_only(
        self, evolved: dict[int, dict[str, Any]], baseline: dict[int, dict[str, Any]]
    ) -> dict[str, Any]:
        wins = sum(evolved[s]["rl_id"][-1] > baseline[s]["rl_id"] for s in self.seeds)
        evolve_median = statistics.median(evolved[s]["rl_id"][-1] for s in self.seeds)
        baseline_median = statistics.median(baseline[s]["rl_id"] for s in self.seeds)
        return {
            "median_evolve": evolve_median,
            "median_rl_only": baseline_median,
            "evolve_wins": wins,
            "holds": evolve_median >= baseline_median - RL_ONLY_SLACK and wins >= 3,
        }

    def rl_converges(self, evolved: dict[int, dict[str, Any]]) -> dict[str, Any]:
        # mean reward over the last batch against the first, per stage
        stages = [
            (first, last)
            for run in evolved.values()
            for first, last in zip(run["rl_reward_first"], run["rl_reward_last"])
        ]
        improved = sum(last >= first for first, last in stages)
        return {"stages": len(stages), "stages_not_worse": improved}

    def determinism(self, seed: int) -> dict[str, Any]:
        print(f"Seed {seed}: repeat run for byte comparison...")
        self.run_evolve(seed, name="repeat")
        first = self.runs / f"seed-{seed}" / "evolve"
        second = self.runs / f"seed-{seed}" / "repeat"
        compared = ["base.ckpt", "summary.json", "table.csv"]
        compared += [
            f"{d.name}/{name}"
            for d in sorted(first.iterdir())
            if d.is_dir() and d.name.isdigit()
            for name in ("sft.ckpt", "rl.ckpt", "report.json", "pool-delta.jsonl")
        ]
        _, mismatch, errors = filecmp.cmpfiles(first, second, compared, shallow=False)
        return {
            "files": len(compared),
            "mismatch": mismatch + errors,
            "identical": not (mismatch or errors),
        }

    def run(self) -> dict[str, Any]:
        self.sample_memory("start")
        start = time.perf_counter()
        evolved = {seed: self.run_evolve(seed) for seed in self.seeds}
        evolve_seconds = time.perf_counter() - start
        baseline = {seed: self.run_rl_only(seed) for seed in self.seeds}

        return {
            "seeds": self.seeds,
            "evolve_seconds": evolve_seconds,
            "iteration_gains": self.iteration_gains(evolved),
            "against_rl_only": self.against_rl_only(evolved, baseline),
            "rl_convergence": self.rl_converges(evolved),
            "determinism": self.determinism(self.seeds[0]),
            "evolved": {str(s): run for s, run in evolved.items()},
            "rl_only": {str(s): run for s, run in baseline.items()},
            "memory": self.memory_samples,
            "peak_rss_mb": max(sample["rss_mb"] for sample in self.memory_samples),
        }


def print_summary(results: dict[str, Any]) -> None:
    gains = results["iteration_gains"]
    versus = results["against_rl_only"]
    print("\n" + "=" * 60)
    print("Desk-scale self-evolution")
    print("=" * 60)
    print(
        f"  RL model ID accuracy, median: iter 1 {gains['median_rl_first']:.3f} "
        f"-> last {gains['median_rl_last']:.3f}  "
        f"[{'PASS' if gains['rl_improves'] else 'FAIL'}]"
    )
    print(
        f"  SFT model ID accuracy, median: {gains['median_sft_previous']:.3f} "
        f"-> {gains['median_sft_last']:.3f}  [{'PASS' if gains['sft_holds'] else 'FAIL'}]"
    )
    print(
        f"  Evolve vs RL-only: {versus['median_evolve']:.3f} vs {versus['median_rl_only']:.3f}, "
        f"{versus['evolve_wins']}/{len(results['seeds'])} wins  "
        f"[{'PASS' if versus['holds'] else 'FAIL'}]"
    )
    conv = results["rl_convergence"]
    print(
        f"  RL stages with last-batch reward >= first: "
        f"{conv['stages_not_worse']}/{conv['stages']}"
    )
    det = results["determinism"]
    print(f"  Repeat run byte-identical: {det['identical']} ({det['files']} files)")
    print(f"  Evolve wall time: {results['evolve_seconds']:.1f} s")
    print(f"  Peak RSS: {results['peak_rss_mb']:.1f} MB")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--runs", default="runs")
    parser.add_argument("--config", default=str(DESK_CONF))
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    benchmark = DeskEvolutionBenchmark(args.seeds, Path(args.runs), Path(args.config))
    results = benchmark.run()
    print_summary(results)

    results_dir = "results"
    os.makedirs(results_dir, exist_ok=True)
    with open(os.path.join(results_dir, "desk_evolution.json"), "w") as f:
        json.dump(results, f, indent=2)
    print(f"Results saved to {results_dir}/desk_evolution.json")


if __name__ == "__main__":
    main()
