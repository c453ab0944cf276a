"""Related-entity search over the graph and entity-augmented queries."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Protocol, runtime_checkable

import numpy as np

from .kg import KnowledgeGraph, link_entities
from .kge import ComplExModel

__all__ = [
    "SimilarityProvider",
    "TrigramSimilarity",
    "RelatedEntities",
    "related_entities",
    "augment_query",
]


@runtime_checkable
class SimilarityProvider(Protocol):
    name: str

    def sim(self, a: str, b: str) -> float: ...


def _trigrams(text: str) -> Counter:
    words = text.casefold().split()
    if not words:
        return Counter()
    s = f"  {' '.join(words)} "
    return Counter(s[i:i + 3] for i in range(len(s) - 2))


class TrigramSimilarity:
    """Cosine similarity of character-trigram TF-IDF vectors.

    IDF weights come from ``corpus`` (smoothed, sklearn-style); trigrams
    never seen in the corpus get the maximum weight. Without a corpus all
    weights are 1.
    """

    name = "lexical"

    def __init__(self, corpus: Iterable[str] = ()):
        docs = [set(_trigrams(d)) for d in corpus]
        n = len(docs)
        df: Counter = Counter()
        for d in docs:
            df.update(d)
        self._idf = {g: math.log((1 + n) / (1 + c)) + 1.0 for g, c in df.items()}
        self._default_idf = math.log(1 + n) + 1.0 if n else 1.0
        self._cache: dict[str, tuple[dict[str, float], float]] = {}

    @classmethod
    def for_graph(cls, kg: KnowledgeGraph) -> "TrigramSimilarity":
        return cls(list(kg.entities.labels) + list(kg.relations.labels))

    def _vec(self, text: str) -> tuple[dict[str, float], float]:
        hit = self._cache.get(text)
        if hit is None:
            v = {g: tf * self._idf.get(g, self._default_idf) for g, tf in _trigrams(text).items()}
            hit = (v, math.sqrt(sum(w * w for w in v.values())))
            if len(self._cache) < 65536:
                self._cache[text] = hit
        return hit

    def sim(self, a: str, b: str) -> float:
        va, na = self._vec(a)
        vb, nb = self._vec(b)
        if na == 0.0 or nb == 0.0:
            return 0.0
        if len(vb) < len(va):
            va, vb = vb, va
        dot = sum(w * vb.get(g, 0.0) for g, w in va.items())
        return min(1.0, dot / (na * nb))

    __call__ = sim


@dataclass(frozen=True)
class RelatedEntities:
    query_linked: tuple[int, ...] = ()
    local_neighbors: tuple[int, ...] = ()
    global_predicted: tuple[int, ...] = ()
    trace: tuple[dict, ...] = field(default=(), compare=False, repr=False)

    def all(self) -> list[int]:
        """Union of the three sets in first-seen order."""
        out: list[int] = []
        for e in (*self.query_linked, *self.local_neighbors, *self.global_predicted):
            if e not in out:
                out.append(e)
        return out

    def __bool__(self) -> bool:
        return bool(self.query_linked or self.local_neighbors or self.global_predicted)


def _rank_relations(e: int, rels: list[int], q: str, kg: KnowledgeGraph, sim: SimilarityProvider) -> list[int]:
    label = kg.entity_label(e)
    sims = [sim.sim(f"{label} {kg.relation_label(r)}", q) for r in rels]
    # best similarity first; equal similarities keep ascending relation id
    order = sorted(range(len(rels)), key=lambda i: (-sims[i], rels[i]))
    return [rels[i] for i in order]


def related_entities(
    q: str,
    kg: KnowledgeGraph,
    model: ComplExModel,
    sim: SimilarityProvider,
    topk: int = 3,
    max_tails: int = 3,
) -> RelatedEntities:
    """Entities linked in ``q`` plus KG neighbours and KGE-predicted tails.

    For each linked entity ``e`` the relations leaving ``e`` are ranked by
    similarity of ``"<entity label> <relation label>"`` to the query. The
    best relation contributes up to ``max_tails`` of its KG tails (ascending
    id). Among the ``topk`` best relations, the ``(relation, tail)`` pair
    with the highest KGE score over the whole vocabulary contributes one
    predicted entity; ties go to the lower tail id, then the earlier-ranked
    relation.
    """
    if topk < 1:
        raise ValueError("topk must be >= 1")
    if max_tails < 1:
        raise ValueError("max_tails must be >= 1")
    linked = link_entities(q, kg)
    local: list[int] = []
    predicted: list[int] = []
    steps = []
    for e in linked:
        rels = sorted({r for r, _ in kg.neighbors(e)})
        if not rels:
            continue
        ranked = _rank_relations(e, rels, q, kg, sim)
        best = ranked[0]
        for t in kg.tails(e, best)[:max_tails]:
            if t not in local:
                local.append(t)

        best_pair, best_score = None, -np.inf
        for r in ranked[:topk]:
            scores = model.tail_scores(e, r)
            t = int(np.argmax(scores))
            s = float(scores[t])
            if s > best_score or (s == best_score and t < best_pair[1]):
                best_pair, best_score = (r, t), s
        if best_pair[1] not in predicted:
            predicted.append(best_pair[1])
        steps.append({"entity": e, "relation_ranking": ranked, "local_relation": best,
                      "predicted": list(best_pair), "predicted_score": best_score})
    return RelatedEntities(tuple(linked), tuple(local), tuple(predicted), tuple(steps))


def augment_query(q: str, ents: RelatedEntities | Iterable[int], kg: KnowledgeGraph) -> str:
    """Prefix ``q`` with ``Related entities: a; b; ...`` (or return it unchanged)."""
    ids = ents.all() if isinstance(ents, RelatedEntities) else list(dict.fromkeys(ents))
    labels = list(dict.fromkeys(kg.entity_label(e) for e in ids))
    if not labels:
        return q
    return "Related entities: " + "; ".join(labels) + "\n" + q
