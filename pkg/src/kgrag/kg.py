"""Knowledge graph storage, indexing and alias-based entity linking.

Triples are read from a tab-separated file (``head<TAB>relation<TAB>tail``)
and an optional alias file (``alias<TAB>canonical_label``). Labels are
interned into dense integer ids, contiguous from zero and in order of first
mention. Once built, a :class:`KnowledgeGraph` is never mutated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "KGFormatError",
    "Triple",
    "Vocabulary",
    "KnowledgeGraph",
    "load_kg",
    "link_entities",
    "neighbors",
    "map_triple",
    "dump_vocab",
    "read_vocab",
]

_WORD = re.compile(r"\w+")
_SPACES = re.compile(r"\s+")


class KGFormatError(ValueError):
    """Raised for malformed triple or alias files."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def _fold(text: str) -> str:
    return _SPACES.sub(" ", text.casefold()).strip()


class Vocabulary:
    """Bidirectional label <-> id map; lookups are case-insensitive."""

    def __init__(self) -> None:
        self._labels: list[str] = []
        self._index: dict[str, int] = {}

    def add(self, label: str) -> int:
        key = _fold(label)
        if not key:
            raise ValueError("empty label")
        idx = self._index.get(key)
        if idx is None:
            idx = len(self._labels)
            self._labels.append(label.strip())
            self._index[key] = idx
        return idx

    def get(self, label: str) -> int | None:
        return self._index.get(_fold(label))

    def label(self, idx: int) -> str:
        if not 0 <= idx < len(self._labels):
            raise KeyError(f"id {idx} out of range (size {len(self._labels)})")
        return self._labels[idx]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: object) -> bool:
        return isinstance(label, str) and _fold(label) in self._index


class KnowledgeGraph:
    """Immutable, indexed set of triples.

    Parameters
    ----------
    entities, relations : Vocabulary
        Label vocabularies. Every id referenced by ``triples`` must exist.
    triples : iterable of Triple
        Duplicates are collapsed.
    aliases : iterable of (alias, entity_id), optional
        Extra surface forms for entities. When an alias names several
        entities, the one with more triples wins, ties going to the lower id.
        Canonical labels always take precedence over aliases.
    """

    def __init__(
        self,
        entities: Vocabulary,
        relations: Vocabulary,
        triples: Iterable[Triple],
        aliases: Iterable[tuple[str, int]] = (),
    ) -> None:
        self.entities = entities
        self.relations = relations
        uniq = sorted({Triple(*map(int, t)) for t in triples})
        for t in uniq:
            if not (0 <= t.head < len(entities) and 0 <= t.tail < len(entities)):
                raise KeyError(f"triple {t} references an unknown entity")
            if not 0 <= t.relation < len(relations):
                raise KeyError(f"triple {t} references an unknown relation")
        self._triples = tuple(uniq)
        self._triple_set = frozenset(uniq)

        by_head: dict[int, list[tuple[int, int]]] = {}
        by_head_rel: dict[tuple[int, int], list[int]] = {}
        degree = np.zeros(len(entities), dtype=np.int64)
        for h, r, t in uniq:
            by_head.setdefault(h, []).append((r, t))
            by_head_rel.setdefault((h, r), []).append(t)
            degree[h] += 1
            degree[t] += 1
        self._by_head = {h: tuple(sorted(v)) for h, v in by_head.items()}
        self._by_head_rel = {k: tuple(sorted(v)) for k, v in by_head_rel.items()}
        self._degree = degree

        surfaces: dict[str, int] = {_fold(lbl): i for i, lbl in enumerate(entities.labels)}
        alias_lists: list[list[str]] = [[] for _ in range(len(entities))]
        claims: dict[str, set[int]] = {}
        for alias, eid in aliases:
            if not 0 <= eid < len(entities):
                raise KeyError(f"alias {alias!r} references unknown entity id {eid}")
            key = _fold(alias)
            if not key:
                continue
            claims.setdefault(key, set()).add(int(eid))
        for key in sorted(claims):
            if key in surfaces:
                continue
            winner = min(claims[key], key=lambda e: (-degree[e], e))
            surfaces[key] = winner
            alias_lists[winner].append(key)
        self._surfaces = surfaces
        self._aliases = tuple(tuple(a) for a in alias_lists)
        self._max_tokens = max((len(_WORD.findall(s)) for s in surfaces), default=0)

    @classmethod
    def from_labeled(
        cls,
        triples: Iterable[Sequence[str]],
        aliases: Iterable[tuple[str, str]] = (),
    ) -> "KnowledgeGraph":
        """Build a graph from ``(head, relation, tail)`` label triples."""
        ents, rels = Vocabulary(), Vocabulary()
        ids = []
        for h, r, t in triples:
            hid = ents.add(h)
            rid = rels.add(r)
            tid = ents.add(t)
            ids.append(Triple(hid, rid, tid))
        alias_ids = []
        for alias, label in aliases:
            eid = ents.get(label)
            if eid is None:
                raise KeyError(f"alias {alias!r} references unknown label {label!r}")
            alias_ids.append((alias, eid))
        return cls(ents, rels, ids, alias_ids)

    # -- views -------------------------------------------------------------

    @property
    def triples(self) -> tuple[Triple, ...]:
        """All triples sorted by (head, relation, tail)."""
        return self._triples

    @property
    def by_head(self) -> dict[int, tuple[tuple[int, int], ...]]:
        return dict(self._by_head)

    @property
    def by_head_rel(self) -> dict[tuple[int, int], tuple[int, ...]]:
        return dict(self._by_head_rel)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: object) -> bool:
        return triple in self._triple_set

    def as_array(self) -> np.ndarray:
        """Triples as an ``(n, 3)`` int64 array."""
        return np.asarray(self._triples, dtype=np.int64).reshape(-1, 3)

    def aliases(self, eid: int) -> tuple[str, ...]:
        self._check_entity(eid)
        return self._aliases[eid]

    def degree(self, eid: int) -> int:
        self._check_entity(eid)
        return int(self._degree[eid])

    def entity_label(self, eid: int) -> str:
        return self.entities.label(eid)

    def relation_label(self, rid: int) -> str:
        return self.relations.label(rid)

    def entity_id(self, surface: str) -> int | None:
        """Exact (case-folded) label or alias lookup."""
        return self._surfaces.get(_fold(surface))

    def relation_id(self, label: str) -> int | None:
        return self.relations.get(label)

    def neighbors(self, eid: int) -> tuple[tuple[int, int], ...]:
        self._check_entity(eid)
        return self._by_head.get(eid, ())

    def tails(self, eid: int, rid: int) -> tuple[int, ...]:
        self._check_entity(eid)
        return self._by_head_rel.get((eid, rid), ())

    def _check_entity(self, eid: int) -> None:
        if not 0 <= eid < len(self.entities):
            raise KeyError(f"unknown entity id {eid}")

    # -- linking -----------------------------------------------------------

    def link(self, text: str) -> list[int]:
        folded = _SPACES.sub(" ", text.casefold())
        tokens = [(m.start(), m.end()) for m in _WORD.finditer(folded)]
        spans = []
        for i, (start, _) in enumerate(tokens):
            for j in range(i, min(i + self._max_tokens, len(tokens))):
                end = tokens[j][1]
                eid = self._surfaces.get(folded[start:end])
                if eid is not None:
                    spans.append((start, end, eid))
        spans.sort(key=lambda s: (s[0] - s[1], s[0]))
        taken: list[tuple[int, int, int]] = []
        for s in spans:
            if all(s[1] <= o[0] or s[0] >= o[1] for o in taken):
                taken.append(s)
        taken.sort()
        out: list[int] = []
        for _, _, eid in taken:
            if eid not in out:
                out.append(eid)
        return out


def _read_rows(path: Path, width: int) -> Iterable[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != width or not all(p.strip() for p in parts):
                raise KGFormatError(
                    f"expected {width} non-empty tab-separated fields, got {len(parts)}",
                    path,
                    lineno,
                )
            yield lineno, [p.strip() for p in parts]


def load_kg(triples_path: str | Path, aliases_path: str | Path | None = None) -> KnowledgeGraph:
    """Load a graph from a triple TSV and an optional alias TSV."""
    triples_path = Path(triples_path)
    rows = [parts for _, parts in _read_rows(triples_path, 3)]
    aliases: list[tuple[str, str]] = []
    if aliases_path is not None:
        aliases_path = Path(aliases_path)
        known = {_fold(x) for h, _, t in rows for x in (h, t)}
        for lineno, (alias, label) in _read_rows(aliases_path, 2):
            if _fold(label) not in known:
                raise KGFormatError(f"alias {alias!r} references unknown label {label!r}", aliases_path, lineno)
            aliases.append((alias, label))
    return KnowledgeGraph.from_labeled(rows, aliases)


def link_entities(text: str, kg: KnowledgeGraph) -> list[int]:
    """Entities whose label or alias occurs in ``text``.

    Matching is case-insensitive and restricted to word boundaries. Longer
    spans win over shorter overlapping ones; results come in span order with
    repeats removed.
    """
    return kg.link(text)


def neighbors(eid: int, kg: KnowledgeGraph) -> list[tuple[int, int]]:
    """Outgoing ``(relation, tail)`` pairs of ``eid`` sorted by ids."""
    return list(kg.neighbors(eid))


def map_triple(
    kg: KnowledgeGraph,
    head: str,
    relation: str,
    tail: str,
    relation_sim: Callable[[str, str], float] | None = None,
    threshold: float = 0.5,
) -> Triple | None:
    """Map a free-text triple onto graph ids, or ``None`` when any part is unknown.

    Entities must match a label or alias exactly (case-folded). Relations fall
    back to the most similar relation label when ``relation_sim`` is given and
    the best similarity reaches ``threshold``.
    """
    h = kg.entity_id(head)
    t = kg.entity_id(tail)
    if h is None or t is None:
        return None
    r = kg.relation_id(relation)
    if r is None and relation_sim is not None and kg.num_relations:
        sims = [relation_sim(relation, lbl) for lbl in kg.relations.labels]
        best = int(np.argmax(sims))
        if sims[best] >= threshold:
            r = best
    if r is None:
        return None
    return Triple(h, r, t)


def dump_vocab(kg: KnowledgeGraph, directory: str | Path) -> None:
    """Write ``entities.tsv`` and ``relations.tsv`` (``id<TAB>label``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, vocab in (("entities.tsv", kg.entities), ("relations.tsv", kg.relations)):
        with open(directory / name, "w", encoding="utf-8", newline="\n") as fh:
            for i, label in enumerate(vocab.labels):
                fh.write(f"{i}\t{label}\n")


def read_vocab(path: str | Path) -> list[str]:
    """Read an ``id<TAB>label`` dump back into a label list."""
    path = Path(path)
    labels = []
    for lineno, (idx, label) in _read_rows(path, 2):
        if idx != str(len(labels)):
            raise KGFormatError(f"expected id {len(labels)}, got {idx}", path, lineno)
        labels.append(label)
    return labels


@dataclass(frozen=True)
class GraphStats:
    entities: int
    relations: int
    triples: int
    aliases: int

    @classmethod
    def of(cls, kg: KnowledgeGraph) -> "GraphStats":
        n_alias = sum(len(kg.aliases(e)) for e in range(kg.num_entities))
        return cls(kg.num_entities, kg.num_relations, len(kg), n_alias)
