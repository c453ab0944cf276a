"""The closed retrieval loop.

Each turn answers the question from the accepted references, scores the
answer's triples against the knowledge graph and either stops or runs one
retrieval round: build a query, augment it with related entities, collect
documents from every knowledge model for both query variants, keep the
relevant ones ranked by factual consistency, and append them to the
reference set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence

import numpy as np

from .augment import RelatedEntities, SimilarityProvider, TrigramSimilarity, augment_query, related_entities
from .controller import ThresholdSchedule, decide
from .gateway import ANSWER, Gateway, GatewayError
from .kg import KnowledgeGraph, Triple, link_entities, map_triple
from .kge import ComplExModel, answer_reliability, relative_triple_score
from .types import ReferenceDoc

__all__ = [
    "PipelineConfig",
    "ScoredClaim",
    "IterationState",
    "AnswerRecord",
    "PipelineError",
    "Pipeline",
    "run_pipeline",
    "write_record",
    "read_record",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    theta0: float
    schedule_c: float = 128.0
    max_turns: int = 2
    k: int = 5
    budget_mode: Literal["k_plus_t", "k"] = "k_plus_t"
    topk_relations: int = 3
    max_tails_per_entity: int = 3
    relation_match_threshold: float = 0.5

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.budget_mode not in ("k_plus_t", "k"):
            raise ValueError(f"unknown budget_mode {self.budget_mode!r}")
        ThresholdSchedule(self.theta0, self.schedule_c, self.max_turns)

    @property
    def schedule(self) -> ThresholdSchedule:
        return ThresholdSchedule(self.theta0, self.schedule_c, self.max_turns)

    def budget(self, turn: int) -> int:
        """Documents that may be added for ``turn``."""
        return self.k + turn if self.budget_mode == "k_plus_t" else self.k


@dataclass(frozen=True)
class ScoredClaim:
    head: str
    relation: str
    tail: str
    mapped: tuple[int, int, int] | None
    relative_score: float | None


@dataclass
class IterationState:
    """One turn of the loop.

    ``q_t``/``q_t_kg`` and ``candidates`` describe the retrieval round that
    produced this turn's new references (empty at turn 0). ``accepted_refs``
    is the reference set the answer was conditioned on.
    """

    t: int
    q_t: str | None
    q_t_kg: str | None
    related: dict[str, list[str]]
    candidates: list[ReferenceDoc]
    accepted_refs: list[ReferenceDoc]
    answer: str
    triples: list[ScoredClaim]
    reliability: float
    verified: int
    unverifiable: int
    theta_t: float
    stop: bool
    reason: str

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "q_t": self.q_t,
            "q_t_kg": self.q_t_kg,
            "related": self.related,
            "candidates": [d.to_dict() for d in self.candidates],
            "accepted_refs": [d.to_dict() for d in self.accepted_refs],
            "answer": self.answer,
            "triples": [
                {**asdict(c), "mapped": list(c.mapped) if c.mapped is not None else None}
                for c in self.triples
            ],
            "reliability": self.reliability,
            "verified": self.verified,
            "unverifiable": self.unverifiable,
            "theta_t": self.theta_t,
            "stop": self.stop,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationState":
        d = dict(d)
        d["candidates"] = [ReferenceDoc.from_dict(x) for x in d["candidates"]]
        d["accepted_refs"] = [ReferenceDoc.from_dict(x) for x in d["accepted_refs"]]
        d["triples"] = [
            ScoredClaim(**{**c, "mapped": tuple(c["mapped"]) if c["mapped"] is not None else None})
            for c in d["triples"]
        ]
        return cls(**d)


@dataclass
class AnswerRecord:
    question: str
    answer: str | None
    stop_reason: str | None
    turns: list[IterationState] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def final_turn(self) -> int:
        return self.turns[-1].t if self.turns else -1

    def to_records(self) -> list[dict]:
        out: list[dict] = [{"type": "question", "question": self.question, "config": self.config}]
        out += [{"type": "turn", **s.to_dict()} for s in self.turns]
        out.append({"type": "answer", "answer": self.answer, "stop_reason": self.stop_reason,
                    "final_turn": self.final_turn})
        return out

    def dumps(self) -> str:
        return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in self.to_records())

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "AnswerRecord":
        rec = cls(question="", answer=None, stop_reason=None)
        for r in records:
            kind = r.get("type")
            body = {k: v for k, v in r.items() if k != "type"}
            if kind == "question":
                rec.question, rec.config = body["question"], body.get("config", {})
            elif kind == "turn":
                rec.turns.append(IterationState.from_dict(body))
            elif kind == "answer":
                rec.answer, rec.stop_reason = body["answer"], body["stop_reason"]
        return rec


class PipelineError(RuntimeError):
    """The loop had to abort; ``record`` holds the turns completed so far."""

    def __init__(self, message: str, record: AnswerRecord, role: str | None = None):
        super().__init__(message)
        self.record = record
        self.role = role


def write_record(record: AnswerRecord, path: str | Path) -> None:
    Path(path).write_text(record.dumps(), encoding="utf-8")


def read_record(path: str | Path) -> AnswerRecord:
    with open(path, encoding="utf-8") as fh:
        return AnswerRecord.from_records(json.loads(line) for line in fh if line.strip())


class Pipeline:
    """Knowledge graph, embeddings, gateway and settings needed to run the loop."""

    def __init__(
        self,
        kg: KnowledgeGraph,
        model: ComplExModel,
        gateway: Gateway,
        config: PipelineConfig,
        sim: SimilarityProvider | None = None,
        echo_config: dict | None = None,
    ):
        if (model.num_entities, model.num_relations) != (kg.num_entities, kg.num_relations):
            raise ValueError("embedding tables do not match the graph vocabulary")
        self.kg = kg
        self.model = model
        self.gateway = gateway
        self.config = config
        self.sim = sim if sim is not None else TrigramSimilarity.for_graph(kg)
        self.echo_config = echo_config if echo_config is not None else asdict(config)

    # -- scoring helpers -----------------------------------------------------

    def map_claim(self, claim: tuple[str, str, str]) -> Triple | None:
        return map_triple(self.kg, *claim, relation_sim=self.sim.sim,
                          threshold=self.config.relation_match_threshold)

    def score_claims(self, claims: Sequence[tuple[str, str, str]]) -> list[ScoredClaim]:
        out = []
        for c in claims:
            tri = self.map_claim(c)
            rel = relative_triple_score(self.model, self.kg, tri)
            out.append(ScoredClaim(*c, tuple(tri) if tri is not None else None, rel))
        return out

    def _extract(self, text: str, turn: int) -> list[tuple[str, str, str]]:
        try:
            return self.gateway.extract_triples(text, turn)
        except GatewayError as exc:
            logger.warning("triple extraction failed at turn %d: %s", turn, exc)
            return []

    # -- retrieval round -----------------------------------------------------

    def generate_candidates(self, q: str, q_kg: str, turn: int) -> list[ReferenceDoc]:
        """One document per knowledge model and query variant; failures are skipped.

        When the augmented query equals the plain one only the plain variant
        is requested. Duplicates by ``(source_model, text)`` are dropped.
        """
        models = self.gateway.knowledge_models
        if not models:
            raise ValueError("no knowledge models registered")
        jobs = [(m, q, "plain") for m in models]
        if q_kg != q:
            jobs += [(m, q_kg, "kg") for m in models]
        seen: set[tuple[str, str]] = set()
        out = []
        for doc in self.gateway.generate_references(jobs, turn):
            if doc is not None and doc.key not in seen:
                seen.add(doc.key)
                out.append(doc)
        return out

    def judge(self, candidates: Sequence[ReferenceDoc], question: str, entities: Sequence[str], turn: int) -> list[ReferenceDoc]:
        """Attach relevance verdicts and, for relevant documents, factual scores."""
        judged = []
        for doc in candidates:
            try:
                relevant = self.gateway.relevance_check(doc, question, entities, turn)
            except GatewayError as exc:
                logger.warning("relevance check failed, treating document as irrelevant: %s", exc)
                relevant = False
            if not relevant:
                judged.append(doc.with_(relevance=False, factual_score=None, triples=()))
                continue
            claims = self._extract(doc.text, turn)
            scores = [c.relative_score for c in self.score_claims(claims) if c.relative_score is not None]
            factual = float(np.mean(scores)) if scores else None
            judged.append(doc.with_(relevance=True, factual_score=factual, triples=tuple(claims)))
        return judged

    @staticmethod
    def select(judged: Sequence[ReferenceDoc], budget: int) -> list[ReferenceDoc]:
        """Relevant documents, most consistent first, unscored last, at most ``budget``."""
        ranked = sorted(
            (i for i, d in enumerate(judged) if d.relevance),
            key=lambda i: (judged[i].factual_score is None, judged[i].factual_score or 0.0, i),
        )
        return [judged[i] for i in ranked[:max(budget, 0)]]

    def filter_references(
        self,
        candidates: Sequence[ReferenceDoc],
        question: str,
        entities: Sequence[str],
        budget: int,
        turn: int = 0,
    ) -> list[ReferenceDoc]:
        if budget < 0:
            raise ValueError("budget must be >= 0")
        if budget == 0:
            return []
        return self.select(self.judge(candidates, question, entities, turn), budget)

    # -- loop ------------------------------------------------------------------

    def run(self, question: str) -> AnswerRecord:
        if not question or not question.strip():
            raise ValueError("empty question")
        cfg = self.config
        sched = cfg.schedule
        record = AnswerRecord(question, None, None, [], self.echo_config)
        question_entities = [self.kg.entity_label(e) for e in link_entities(question, self.kg)]

        accepted: list[ReferenceDoc] = []
        t = 0
        q_t = q_kg = None
        related: dict[str, list[str]] = {}
        candidates: list[ReferenceDoc] = []
        while True:
            try:
                answer = self.gateway.generate_answer(question, accepted, turn=t)
            except GatewayError as exc:
                raise PipelineError(f"answer generation failed at turn {t}: {exc}", record, ANSWER) from exc
            claims = self.score_claims(self._extract(answer, t))
            rel = answer_reliability(self.model, self.kg, [c.mapped and Triple(*c.mapped) for c in claims])
            decision = decide(sched, t, rel)
            record.turns.append(IterationState(
                t=t, q_t=q_t, q_t_kg=q_kg, related=related, candidates=candidates,
                accepted_refs=list(accepted), answer=answer, triples=claims,
                reliability=rel.score, verified=rel.verified, unverifiable=rel.unverifiable,
                theta_t=decision.theta_t, stop=decision.stop, reason=decision.reason.value,
            ))
            if decision.stop:
                record.answer, record.stop_reason = answer, decision.reason.value
                return record

            t += 1
            try:
                q_t = self.gateway.regenerate_query(question, accepted, answer, t)
            except GatewayError as exc:
                logger.warning("query regeneration failed, using the question: %s", exc)
                q_t = question
            ents = related_entities(q_t, self.kg, self.model, self.sim,
                                    topk=cfg.topk_relations, max_tails=cfg.max_tails_per_entity)
            q_kg = augment_query(q_t, ents, self.kg)
            related = self._labels(ents)
            raw = self.generate_candidates(q_t, q_kg, t)
            have = {d.key for d in accepted}
            raw = [d for d in raw if d.key not in have]
            candidates = self.judge(raw, question, question_entities, t) if cfg.budget(t) > 0 else raw
            new = self.select(candidates, cfg.budget(t))
            accepted = accepted + [d.with_(turn_added=t) for d in new]

    def _labels(self, ents: RelatedEntities) -> dict[str, list[str]]:
        lab = self.kg.entity_label
        return {
            "query_linked": [lab(e) for e in ents.query_linked],
            "local_neighbors": [lab(e) for e in ents.local_neighbors],
            "global_predicted": [lab(e) for e in ents.global_predicted],
        }


def run_pipeline(question: str, pipeline: Pipeline) -> AnswerRecord:
    """Answer ``question`` with the closed retrieval loop."""
    return pipeline.run(question)
