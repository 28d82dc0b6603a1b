from __future__ import annotations

import os
import sys

import pytest

sys.path.insert(
    0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src"))
)

from search_agent_lab.policy import PolicyArch, PolicyParams, Vocabulary
from search_agent_lab.world import KnowledgeGraph, Split, generate_questions, generate_world


@pytest.fixture(scope="session")
def tiny_world() -> KnowledgeGraph:
    return generate_world(3, 12, 3)


@pytest.fixture(scope="session")
def vocab(tiny_world: KnowledgeGraph) -> Vocabulary:
    return Vocabulary.from_world(tiny_world)


@pytest.fixture(scope="session")
def questions(tiny_world: KnowledgeGraph):
    return generate_questions(tiny_world, {1: 1.0}, 4, Split.TRAIN, 0)


@pytest.fixture
def tiny_arch(vocab: Vocabulary) -> PolicyArch:
    return PolicyArch(context_window=3, hidden_size=4, vocab_size=len(vocab))


@pytest.fixture
def random_params(tiny_arch: PolicyArch) -> PolicyParams:
    return PolicyParams.initialize(tiny_arch, seed=11, scale=0.3)
