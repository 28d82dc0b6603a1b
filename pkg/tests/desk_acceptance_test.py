"""Desk-scale acceptance: accuracy gains across iterations and against RL-only.

Several minutes per seed, so it runs only when SEARCH_LAB_DESK is set::

    SEARCH_LAB_DESK=1 pytest tests/desk_acceptance_test.py
"""

from __future__ import annotations

import importlib.util
import os
from pathlib import Path

import pytest

BENCHMARK = Path(__file__).resolve().parents[1] / "benchmarks" / "desk_evolution.py"

pytestmark = pytest.mark.skipif(
    not os.environ.get("SEARCH_LAB_DESK"), reason="set SEARCH_LAB_DESK to run the desk runs"
)


def load_benchmark():
    spec = importlib.util.spec_from_file_location("desk_evolution", BENCHMARK)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    module = load_benchmark()
    benchmark = module.DeskEvolutionBenchmark([0, 1, 2, 3, 4], tmp_path_factory.mktemp("desk"))
    evolved = {seed: benchmark.run_evolve(seed) for seed in benchmark.seeds}
    baseline = {seed: benchmark.run_rl_only(seed) for seed in benchmark.seeds}
    return benchmark, evolved, baseline


def test_accuracy_rises_across_iterations(desk_runs):
    benchmark, evolved, _ = desk_runs
    gains = benchmark.iteration_gains(evolved)
    assert gains["rl_improves"], gains
    assert gains["sft_holds"], gains


def test_evolution_matches_or_beats_rl_only(desk_runs):
    benchmark, evolved, baseline = desk_runs
    versus = benchmark.against_rl_only(evolved, baseline)
    assert versus["holds"], versus
