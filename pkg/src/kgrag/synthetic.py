"""Small generated graphs for tests, demos and sanity checks."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph, Triple

__all__ = ["rule_kg", "chain_kg", "random_kg", "case_study_dir", "CASE_STUDY_QUESTION"]

CASE_STUDY_QUESTION = "Whose teacher was Bernhard Heiden's, and what nationality?"


def case_study_dir() -> Path:
    """Directory holding the bundled composer case study (graph, aliases, fixtures, config)."""
    return Path(str(resources.files("kgrag").joinpath("data", "case_study")))


def rule_kg(groups: int = 7, members: int = 5, held_out: int = 1) -> tuple[KnowledgeGraph, list[Triple], list[Triple]]:
    """Graph obeying ``r(a, b) and s(b, c) -> t(a, c)``.

    Each group ``g`` has a hub ``b{g}`` with ``s(b{g}, c{g})`` and members
    ``a{g}_{m}`` with ``r(a, b{g})`` and ``t(a, c{g})``. The ``t`` triples of
    the first ``held_out`` members of every group form the test split.

    Returns
    -------
    kg, train, test
    """
    labeled, test_mask = [], []
    for g in range(groups):
        labeled.append((f"b{g}", "s", f"c{g}"))
        test_mask.append(False)
        for m in range(members):
            a = f"a{g}_{m}"
            labeled.append((a, "r", f"b{g}"))
            test_mask.append(False)
            labeled.append((a, "t", f"c{g}"))
            test_mask.append(m < held_out)
    kg = KnowledgeGraph.from_labeled(labeled)
    ids = [Triple(kg.entity_id(h), kg.relation_id(r), kg.entity_id(t)) for h, r, t in labeled]
    train = [tri for tri, held in zip(ids, test_mask) if not held]
    test = [tri for tri, held in zip(ids, test_mask) if held]
    return kg, train, test


def chain_kg(n: int = 50) -> KnowledgeGraph:
    """``e0 -next-> e1 -next-> ... -> e{n-1}``."""
    return KnowledgeGraph.from_labeled((f"e{i}", "next", f"e{i + 1}") for i in range(n - 1))


def random_kg(
    rng: np.random.Generator,
    n_entities: int = 20,
    n_relations: int = 4,
    n_triples: int = 50,
) -> KnowledgeGraph:
    """Uniformly random graph over ``ent{i}`` / ``rel{j}`` labels (all labels present)."""
    ents = [f"ent{i}" for i in range(n_entities)]
    rels = [f"rel{j}" for j in range(n_relations)]
    triples = set()
    # make sure every label is mentioned so vocab sizes are exact
    for i, e in enumerate(ents):
        triples.add((e, rels[i % n_relations], ents[(i + 1) % n_entities]))
    target = min(max(n_triples, n_entities), n_entities * n_entities * n_relations)
    while len(triples) < target:
        h, t = rng.integers(0, n_entities, size=2)
        r = rng.integers(0, n_relations)
        triples.add((ents[h], rels[r], ents[t]))
    return KnowledgeGraph.from_labeled(sorted(triples))
