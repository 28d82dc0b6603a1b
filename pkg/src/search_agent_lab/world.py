"""Seeded synthetic world: knowledge graph, multi-hop questions and web_search."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import BudgetExhausted, ConfigError, ExhaustedPaths, InvalidGraph, InvalidSize
from .scoring import normalize_tokens

RELATION_LABELS = (
    "founder",
    "capital",
    "mentor",
    "rival",
    "owner",
    "leader",
    "creator",
    "neighbor",
    "partner",
    "successor",
    "director",
    "author",
)
ENTITY_KINDS = ("city", "person", "company", "river", "band", "novel", "ship", "museum")

ID_TEMPLATE_WORDS = ("who", "is", "the", "of", "?")
OOD_TEMPLATE_WORDS = ("which", "entity", "is", "'s", "?")
DESCRIPTION_WORDS = ("is", "a")

BUDGET_NOTICE = "search budget exhausted"
INVALID_CALL_NOTICE = "invalid tool call"

DEFAULT_HOP_MIX = {1: 0.25, 2: 0.375, 3: 0.375}
DEFAULT_TOP_K = 10
HOLDOUT_FRACTION = 0.2

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class Entity:
    name: str
    description: str


@dataclass(frozen=True)
class Triple:
    subject: str
    relation: str
    object: str

    def verbalize(self) -> str:
        return f"{self.subject} {self.relation} {self.object}"


@dataclass(frozen=True)
class SearchResult:
    title: str
    snippet: str
    score: int


@dataclass(frozen=True)
class _Document:
    title: str
    snippet: str
    tokens: Counter


@dataclass(frozen=True)
class KnowledgeGraph:
    entities: tuple[Entity, ...]
    triples: tuple[Triple, ...]
    seed: int = 0
    relations: tuple[str, ...] = ()
    holdout: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        names = [entity.name for entity in self.entities]
        if len(set(names)) != len(names):
            raise InvalidGraph("entity names are not unique")
        known = set(names)
        for triple in self.triples:
            if triple.subject not in known or triple.object not in known:
                raise InvalidGraph(f"triple {triple.verbalize()!r} names an unknown entity")
        if not self.holdout <= known:
            raise InvalidGraph("holdout names an unknown entity")
        if not self.relations:
            labels = dict.fromkeys(triple.relation for triple in self.triples)
            object.__setattr__(self, "relations", tuple(labels))

    @cached_property
    def entity_names(self) -> tuple[str, ...]:
        return tuple(entity.name for entity in self.entities)

    @cached_property
    def out_edges(self) -> dict[str, tuple[Triple, ...]]:
        edges: dict[str, list[Triple]] = defaultdict(list)
        for triple in self.triples:
            edges[triple.subject].append(triple)
        return {name: tuple(edges.get(name, ())) for name in self.entity_names}

    @cached_property
    def _documents(self) -> tuple[_Document, ...]:
        # entity-id order, each description ahead of that entity's triples
        docs = []
        for entity in self.entities:
            docs.append(_document(entity.name, entity.description))
            for triple in self.out_edges[entity.name]:
                docs.append(_document(triple.subject, triple.verbalize()))
        return tuple(docs)

    @cached_property
    def _inverted_index(self) -> dict[str, tuple[tuple[int, int], ...]]:
        postings: dict[str, list[tuple[int, int]]] = defaultdict(list)
        for doc_id, doc in enumerate(self._documents):
            for token, count in doc.tokens.items():
                postings[token].append((doc_id, count))
        return {token: tuple(entries) for token, entries in postings.items()}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "relations": list(self.relations),
            "entities": [
                {"name": entity.name, "description": entity.description}
                for entity in self.entities
            ],
            "triples": [[t.subject, t.relation, t.object] for t in self.triples],
            "holdout": sorted(self.holdout),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> KnowledgeGraph:
        return cls(
            entities=tuple(Entity(e["name"], e["description"]) for e in data["entities"]),
            triples=tuple(Triple(*t) for t in data["triples"]),
            seed=int(data["seed"]),
            relations=tuple(data["relations"]),
            holdout=frozenset(data["holdout"]),
        )


def _document(title: str, snippet: str) -> _Document:
    tokens = Counter(normalize_tokens(title) + normalize_tokens(snippet))
    return _Document(title, snippet, tokens)


class Split(Enum):
    TRAIN = "train"
    EVAL_ID = "eval-id"
    EVAL_OOD = "eval-ood"


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answer: str
    hop_count: int
    split: Split
    anchor: str
    relations: tuple[str, ...]
    path: tuple[str, ...]
    shard: int | None = None

    @property
    def path_key(self) -> tuple[str, tuple[str, ...]]:
        return (self.anchor, self.relations)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "gold_answer": self.gold_answer,
            "hop_count": self.hop_count,
            "split": self.split.value,
            "anchor": self.anchor,
            "relations": list(self.relations),
            "path": list(self.path),
            "shard": self.shard,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Question:
        return cls(
            id=data["id"],
            text=data["text"],
            gold_answer=data["gold_answer"],
            hop_count=int(data["hop_count"]),
            split=Split(data["split"]),
            anchor=data["anchor"],
            relations=tuple(data["relations"]),
            path=tuple(data["path"]),
            shard=data.get("shard"),
        )


def _pseudo_word(rng: np.random.Generator) -> str:
    syllables = int(rng.integers(2, 4))
    word = "".join(
        _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
        for _ in range(syllables)
    )
    if rng.random() < 0.5:
        word += _CONSONANTS[rng.integers(len(_CONSONANTS))]
    return word.capitalize()


def generate_world(seed: int, n_entities: int, n_relations: int) -> KnowledgeGraph:
    if n_entities < 10:
        raise InvalidSize("n_entities", n_entities, ">= 10")
    if not 1 <= n_relations <= len(RELATION_LABELS):
        raise InvalidSize("n_relations", n_relations, f"in [1, {len(RELATION_LABELS)}]")

    rng = np.random.default_rng(seed)
    reserved = set(RELATION_LABELS) | set(ID_TEMPLATE_WORDS) | set(OOD_TEMPLATE_WORDS)
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < n_entities:
        name = _pseudo_word(rng)
        if name.lower() in seen or name.lower() in reserved:
            continue
        seen.add(name.lower())
        names.append(name)

    chosen = sorted(rng.choice(len(RELATION_LABELS), size=n_relations, replace=False))
    relations = tuple(RELATION_LABELS[i] for i in chosen)

    entities = tuple(
        Entity(name, f"{name} is a {ENTITY_KINDS[rng.integers(len(ENTITY_KINDS))]}")
        for name in names
    )

    triples = []
    max_degree = min(3, n_relations)
    for index, name in enumerate(names):
        degree = int(rng.integers(1, max_degree + 1))
        labels = sorted(rng.choice(n_relations, size=degree, replace=False))
        for label in labels:
            target = int(rng.integers(n_entities - 1))
            if target >= index:
                target += 1
            triples.append(Triple(name, relations[label], names[target]))

    order = rng.permutation(n_entities)
    holdout = frozenset(names[i] for i in order[: round(HOLDOUT_FRACTION * n_entities)])
    return KnowledgeGraph(entities, tuple(triples), seed, relations, holdout)


def _question_words(split: Split, anchor: str, relations: tuple[str, ...]) -> list[str]:
    if split is Split.EVAL_OOD:
        words = ["which", "entity", "is", anchor]
        for relation in relations:
            words += ["'s", relation]
        return words + ["?"]

    words = ["who", "is"]
    for relation in reversed(relations):
        words += ["the", relation, "of"]
    return words + [anchor, "?"]


def _simple_paths(
    kg: KnowledgeGraph, anchors: Iterable[str], hops: int
) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    paths = []

    def extend(path: list[str], relations: list[str]) -> None:
        if len(relations) == hops:
            paths.append((tuple(path), tuple(relations)))
            return
        for triple in kg.out_edges[path[-1]]:
            if triple.object in path:
                continue
            path.append(triple.object)
            relations.append(triple.relation)
            extend(path, relations)
            path.pop()
            relations.pop()

    for anchor in anchors:
        extend([anchor], [])
    return paths


def _hop_quotas(mix: Mapping[int, float], n: int) -> dict[int, int]:
    if not mix or any(hops < 1 for hops in mix) or any(w < 0 for w in mix.values()):
        raise ConfigError("hop_mix", "needs hop counts >= 1 with non-negative weights")
    total = sum(mix.values())
    if total <= 0:
        raise ConfigError("hop_mix", "weights sum to zero")

    raw = {hops: n * weight / total for hops, weight in sorted(mix.items())}
    quotas = {hops: int(np.floor(value)) for hops, value in raw.items()}
    leftover = n - sum(quotas.values())
    by_remainder = sorted(raw, key=lambda hops: (-(raw[hops] - quotas[hops]), hops))
    for hops in by_remainder[:leftover]:
        quotas[hops] += 1
    return quotas


def generate_questions(
    kg: KnowledgeGraph,
    mix: Mapping[int, float],
    n: int,
    split: Split,
    seed: int,
    exclude: Iterable[tuple[str, tuple[str, ...]]] = (),
) -> list[Question]:
    """Sample n questions with distinct gold paths.

    Per-hop counts follow ``mix`` by largest-remainder rounding, so the
    histogram matches the mix to within one question per hop count.
    """
    if not kg.entities:
        raise InvalidSize("entities", 0, ">= 1")
    if n < 1:
        raise InvalidSize("n", n, ">= 1")

    excluded = set(exclude)
    if split is Split.EVAL_OOD:
        anchors = [name for name in kg.entity_names if name in kg.holdout]
    else:
        anchors = [name for name in kg.entity_names if name not in kg.holdout]

    rng = np.random.default_rng(seed)
    picked: list[tuple[tuple[str, ...], tuple[str, ...]]] = []
    for hops, quota in _hop_quotas(mix, n).items():
        if quota == 0:
            continue
        candidates = [
            (path, relations)
            for path, relations in _simple_paths(kg, anchors, hops)
            if (path[0], relations) not in excluded
        ]
        if len(candidates) < quota:
            raise ExhaustedPaths(hops, quota, len(candidates))
        for index in rng.choice(len(candidates), size=quota, replace=False):
            picked.append(candidates[index])

    questions = []
    for number, index in enumerate(rng.permutation(len(picked))):
        path, relations = picked[index]
        questions.append(
            Question(
                id=f"{split.value}-{seed}-{number:05d}",
                text=" ".join(_question_words(split, path[0], relations)),
                gold_answer=path[-1],
                hop_count=len(relations),
                split=split,
                anchor=path[0],
                relations=relations,
                path=path,
            )
        )
    return questions


class SearchBudget:
    def __init__(self, limit: int) -> None:
        self.limit = limit
        self.remaining = limit

    def consume(self) -> None:
        if self.remaining <= 0:
            raise BudgetExhausted(self.limit)
        self.remaining -= 1


def web_search(
    kg: KnowledgeGraph,
    query: str,
    top_k: int = DEFAULT_TOP_K,
    budget: SearchBudget | None = None,
) -> list[SearchResult]:
    if top_k < 1:
        raise InvalidSize("top_k", top_k, ">= 1")
    if budget is not None:
        budget.consume()

    scores: Counter = Counter()
    index = kg._inverted_index
    for token in set(normalize_tokens(query)):
        for doc_id, count in index.get(token, ()):
            scores[doc_id] += count

    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:top_k]
    documents = kg._documents
    return [
        SearchResult(documents[doc_id].title, documents[doc_id].snippet, score)
        for doc_id, score in ranked
    ]


class SearchSession:
    """Per-rollout tool executor; one budget unit per query."""

    def __init__(self, kg: KnowledgeGraph, top_k: int, max_searches: int) -> None:
        self.kg = kg
        self.top_k = top_k
        self.budget = SearchBudget(max_searches)

    @property
    def remaining(self) -> int:
        return self.budget.remaining

    def execute(self, queries: Iterable[str]) -> tuple[list[SearchResult], str | None]:
        results: list[SearchResult] = []
        for query in queries:
            try:
                results.extend(web_search(self.kg, query, self.top_k, self.budget))
            except BudgetExhausted:
                return results, BUDGET_NOTICE
        return results, None


def save_world(kg: KnowledgeGraph, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(kg.to_dict(), sort_keys=True, indent=1) + "\n", "utf-8")


def load_world(path: str | Path) -> KnowledgeGraph:
    return KnowledgeGraph.from_dict(json.loads(Path(path).read_text("utf-8")))


def save_questions(questions: Iterable[Question], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for question in questions:
            f.write(json.dumps(question.to_dict(), sort_keys=True) + "\n")


def load_questions(path: str | Path) -> list[Question]:
    with Path(path).open(encoding="utf-8") as f:
        return [Question.from_dict(json.loads(line)) for line in f if line.strip()]
