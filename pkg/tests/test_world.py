from __future__ import annotations

from collections import Counter, deque

import numpy as np
import pytest

from search_agent_lab.errors import BudgetExhausted, ExhaustedPaths, InvalidGraph, InvalidSize
from search_agent_lab.scoring import normalize_tokens
from search_agent_lab.world import (
    BUDGET_NOTICE,
    Entity,
    KnowledgeGraph,
    SearchBudget,
    SearchSession,
    Split,
    Triple,
    generate_questions,
    generate_world,
    load_questions,
    load_world,
    save_questions,
    save_world,
    web_search,
)


@pytest.fixture(scope="module")
def world() -> KnowledgeGraph:
    return generate_world(0, 400, 8)


def single_triple_graph() -> KnowledgeGraph:
    return KnowledgeGraph(
        entities=(Entity("Alfa", "Alfa is a city"), Entity("Bravo", "Bravo is a band")),
        triples=(Triple("Alfa", "founder", "Bravo"),),
    )


def reachable(kg: KnowledgeGraph, start: str, goal: str, hops: int) -> bool:
    frontier = deque([(start, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if node == goal and depth == hops:
            return True
        if depth < hops:
            frontier.extend((t.object, depth + 1) for t in kg.triples if t.subject == node)
    return False


def test_generate_world_is_deterministic() -> None:
    assert generate_world(1, 10, 3) == generate_world(1, 10, 3)


def test_generate_world_seeds_differ() -> None:
    first = set(generate_world(1, 200, 8).triples)
    second = set(generate_world(2, 200, 8).triples)
    assert first != second


def test_generate_world_sizes() -> None:
    with pytest.raises(InvalidSize):
        generate_world(1, 5, 3)
    with pytest.raises(InvalidSize):
        generate_world(1, 20, 0)
    with pytest.raises(InvalidSize):
        generate_world(1, 20, 99)


def test_generate_world_connectivity(world: KnowledgeGraph) -> None:
    with_edges = sum(1 for name in world.entity_names if world.out_edges[name])
    assert with_edges >= 0.95 * len(world.entities)
    assert len(world.relations) == 8
    assert len(world.holdout) == 80


def test_graph_validation() -> None:
    with pytest.raises(InvalidGraph):
        KnowledgeGraph(entities=(Entity("A", "A"), Entity("A", "A")), triples=())
    with pytest.raises(InvalidGraph):
        KnowledgeGraph(entities=(Entity("A", "A"),), triples=(Triple("A", "rival", "B"),))


def test_hop_mix_histogram(world: KnowledgeGraph) -> None:
    mix = {1: 0.25, 2: 0.375, 3: 0.375}
    questions = generate_questions(world, mix, 1000, Split.TRAIN, 5)
    counts = Counter(q.hop_count for q in questions)
    for hops, weight in mix.items():
        assert abs(counts[hops] / 1000 - weight) <= 0.02
    assert len({q.path_key for q in questions}) == 1000
    assert len({q.id for q in questions}) == 1000


def test_questions_follow_graph_paths(world: KnowledgeGraph) -> None:
    triples = set(world.triples)
    questions = generate_questions(world, {1: 1, 2: 1, 3: 1}, 60, Split.TRAIN, 1)
    for question in questions:
        assert question.path[0] == question.anchor
        assert question.path[-1] == question.gold_answer
        assert question.hop_count == len(question.relations) == len(question.path) - 1
        for index, relation in enumerate(question.relations):
            assert Triple(question.path[index], relation, question.path[index + 1]) in triples
        assert reachable(world, question.anchor, question.gold_answer, question.hop_count)
        assert question.anchor not in world.holdout


def test_single_triple_question() -> None:
    kg = single_triple_graph()
    (question,) = generate_questions(kg, {1: 1.0}, 1, Split.TRAIN, 0)
    assert question.gold_answer == "Bravo"
    assert question.text == "who is the founder of Alfa ?"
    with pytest.raises(ExhaustedPaths):
        generate_questions(kg, {1: 1.0}, 2, Split.TRAIN, 0)


def test_ood_questions_use_holdout_anchors(world: KnowledgeGraph) -> None:
    questions = generate_questions(world, {1: 0.5, 2: 0.5}, 50, Split.EVAL_OOD, 3)
    assert all(q.anchor in world.holdout for q in questions)
    assert all(q.text.startswith("which entity is") for q in questions)


def test_eval_questions_exclude_train_paths(world: KnowledgeGraph) -> None:
    train = generate_questions(world, {1: 1.0}, 100, Split.TRAIN, 0)
    held = generate_questions(
        world, {1: 1.0}, 50, Split.EVAL_ID, 1, exclude={q.path_key for q in train}
    )
    assert not {q.path_key for q in train} & {q.path_key for q in held}


def test_world_and_questions_persist(tmp_path, world: KnowledgeGraph) -> None:
    save_world(world, tmp_path / "world.json")
    assert load_world(tmp_path / "world.json") == world
    questions = generate_questions(world, {2: 1.0}, 10, Split.EVAL_ID, 4)
    save_questions(questions, tmp_path / "q.jsonl")
    assert load_questions(tmp_path / "q.jsonl") == questions


def test_search_exact_name_ranks_description_first(world: KnowledgeGraph) -> None:
    for entity in world.entities[:20]:
        results = web_search(world, entity.name, top_k=5)
        assert results[0].title == entity.name
        assert results[0].snippet == entity.description


def test_search_matches_exhaustive_scoring(world: KnowledgeGraph) -> None:
    documents = []
    for entity in world.entities:
        documents.append((entity.name, entity.description))
        documents += [(t.subject, t.verbalize()) for t in world.triples if t.subject == entity.name]

    rng = np.random.default_rng(0)
    vocabulary = list(world.entity_names) + list(world.relations) + ["city", "zzz"]
    for _ in range(30):
        query = " ".join(rng.choice(vocabulary, size=3))
        terms = set(normalize_tokens(query))
        scored = []
        for doc_id, (title, snippet) in enumerate(documents):
            tokens = normalize_tokens(title) + normalize_tokens(snippet)
            score = sum(tokens.count(term) for term in terms)
            if score:
                scored.append((-score, doc_id, title, snippet))
        expected = [(t, s, -neg) for neg, _, t, s in sorted(scored)[:7]]
        results = web_search(world, query, top_k=7)
        assert [(r.title, r.snippet, r.score) for r in results] == expected


def test_search_without_overlap_is_empty(world: KnowledgeGraph) -> None:
    assert web_search(world, "qqqq xxxx") == []
    with pytest.raises(InvalidSize):
        web_search(world, "anything", top_k=0)


def test_search_budget() -> None:
    kg = single_triple_graph()
    budget = SearchBudget(10)
    for _ in range(10):
        web_search(kg, "Alfa", budget=budget)
    with pytest.raises(BudgetExhausted):
        web_search(kg, "Alfa", budget=budget)


def test_session_reports_exhausted_budget() -> None:
    session = SearchSession(single_triple_graph(), top_k=3, max_searches=1)
    results, notice = session.execute(["Alfa", "Bravo"])
    assert notice == BUDGET_NOTICE
    assert results[0].title == "Alfa"
    assert session.remaining == 0
    assert session.execute(["Bravo"]) == ([], BUDGET_NOTICE)
