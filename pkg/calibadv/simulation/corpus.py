# calibadv/simulation/corpus.py
"""
Synthetic multi-hop corpus.

Each question is a chain of entities e0 -> e1 -> ... -> eh, one document per
hop, plus D distractor documents whose entities never appear on any chain.
Entity names are two distinct made-up words and no word is reused anywhere in
the corpus, so token F1 between two different entities is always 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import networkx as nx
import numpy as np

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")
_RELATIONS = (
    "founder", "birthplace", "capital", "author", "director",
    "headquarters", "successor", "spouse", "manufacturer", "composer",
)


@dataclass(frozen=True)
class Document:
    doc_id: str
    subject: str
    relation: str
    object: str

    @property
    def text(self) -> str:
        return f"The {self.relation} of {self.subject} is {self.object}."


@dataclass(frozen=True)
class Question:
    question_id: str
    chain: Tuple[str, ...]
    relations: Tuple[str, ...]
    hop_docs: Tuple[str, ...]
    distractor_docs: Tuple[str, ...]

    @property
    def topic_entity(self) -> str:
        return self.chain[0]

    @property
    def answer(self) -> str:
        return self.chain[-1]

    @property
    def hops(self) -> int:
        return len(self.hop_docs)

    @property
    def text(self) -> str:
        inner = self.topic_entity
        for rel in self.relations:
            inner = f"the {rel} of {inner}"
        return f"What is {inner}?"


class SyntheticCorpus:
    def __init__(self, graph: nx.DiGraph, documents: Dict[str, Document], questions: List[Question]):
        self.graph = graph
        self.documents = documents
        self.questions: Tuple[Question, ...] = tuple(questions)
        self._by_id = {q.question_id: q for q in self.questions}

    def question(self, question_id: str) -> Question:
        try:
            return self._by_id[question_id]
        except KeyError:
            raise KeyError(f"unknown question {question_id!r}")

    @property
    def question_ids(self) -> List[str]:
        return [q.question_id for q in self.questions]

    def distractor_subjects(self, question_id: str) -> Tuple[str, ...]:
        q = self.question(question_id)
        return tuple(self.documents[d].subject for d in q.distractor_docs)

    def lookup(self, entity: str) -> Tuple[Tuple[str, ...], Optional[str]]:
        """Documents whose subject is `entity`, and the entity they lead to."""
        if not self.graph.has_node(entity):
            return (), None
        edges = sorted(self.graph.out_edges(entity, data=True), key=lambda e: e[2]["doc_id"])
        if not edges:
            return (), None
        return tuple(e[2]["doc_id"] for e in edges), edges[0][1]

    def chain_docs(self) -> Dict[str, str]:
        return {d: q.question_id for q in self.questions for d in q.hop_docs}


class _NameGenerator:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set = set()

    def word(self) -> str:
        while True:
            n = int(self.rng.integers(2, 4))
            w = "".join(
                _ONSETS[int(self.rng.integers(len(_ONSETS)))] + _VOWELS[int(self.rng.integers(len(_VOWELS)))]
                for _ in range(n)
            )
            # article-like or already used words are rejected
            if w not in self.used and w not in ("a", "an", "the"):
                self.used.add(w)
                return w

    def entity(self) -> str:
        return f"{self.word().title()} {self.word().title()}"


def generate_corpus(
    seed: Union[int, np.random.SeedSequence],
    n_questions: int,
    hops: int,
    distractors: int,
) -> SyntheticCorpus:
    if hops < 1:
        raise ValueError(f"hops must be >= 1, got {hops}")
    if n_questions < 1 or distractors < 0:
        raise ValueError("n_questions must be >= 1 and distractors >= 0")

    rng = np.random.default_rng(seed)
    names = _NameGenerator(rng)
    graph = nx.DiGraph()
    documents: Dict[str, Document] = {}
    questions: List[Question] = []

    width = len(str(n_questions - 1))
    for qi in range(n_questions):
        qid = f"q{qi:0{width}d}"
        chain = tuple(names.entity() for _ in range(hops + 1))
        relations = tuple(_RELATIONS[int(rng.integers(len(_RELATIONS)))] for _ in range(hops))
        for e in chain:
            graph.add_node(e, question_id=qid, role="chain")

        hop_docs = []
        for k in range(hops):
            doc = Document(f"{qid}/hop{k}", chain[k], relations[k], chain[k + 1])
            documents[doc.doc_id] = doc
            graph.add_edge(doc.subject, doc.object, doc_id=doc.doc_id, relation=doc.relation)
            hop_docs.append(doc.doc_id)

        distractor_docs = []
        for j in range(distractors):
            subject, obj = names.entity(), names.entity()
            graph.add_node(subject, question_id=qid, role="distractor")
            graph.add_node(obj, question_id=qid, role="distractor")
            doc = Document(
                f"{qid}/distractor{j}",
                subject,
                _RELATIONS[int(rng.integers(len(_RELATIONS)))],
                obj,
            )
            documents[doc.doc_id] = doc
            graph.add_edge(subject, obj, doc_id=doc.doc_id, relation=doc.relation)
            distractor_docs.append(doc.doc_id)

        questions.append(Question(qid, chain, relations, tuple(hop_docs), tuple(distractor_docs)))

    return SyntheticCorpus(graph, documents, questions)
