"""Knowledge-graph-guided adaptive retrieval-augmented question answering."""

__version__ = "0.1.0"

from .kg import KnowledgeGraph, Triple, link_entities, load_kg, neighbors
from .kge import (
    ComplExModel,
    TrainConfig,
    answer_reliability,
    predict_tail,
    relative_triple_score,
    score,
    train,
)
from .controller import ThresholdSchedule, decide, threshold_at
from .augment import RelatedEntities, TrigramSimilarity, augment_query, related_entities
from .gateway import FixtureBackend, Gateway, HttpBackend, Trace
from .types import ReferenceDoc
from .pipeline import AnswerRecord, Pipeline, PipelineConfig, run_pipeline
from .evaluation import em, evaluate, f1, normalize_answer

__all__ = [
    "KnowledgeGraph", "Triple", "load_kg", "link_entities", "neighbors",
    "ComplExModel", "TrainConfig", "score", "train", "relative_triple_score",
    "answer_reliability", "predict_tail",
    "ThresholdSchedule", "threshold_at", "decide",
    "RelatedEntities", "TrigramSimilarity", "related_entities", "augment_query",
    "FixtureBackend", "Gateway", "HttpBackend", "Trace",
    "ReferenceDoc", "AnswerRecord", "Pipeline", "PipelineConfig", "run_pipeline",
    "normalize_answer", "em", "f1", "evaluate",
]
