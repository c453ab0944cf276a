"""Exact match / F1 evaluation of the pipeline over QA datasets."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .pipeline import AnswerRecord, Pipeline, PipelineError

__all__ = [
    "QAItem",
    "ItemResult",
    "EvalReport",
    "normalize_answer",
    "em",
    "f1",
    "load_dataset",
    "convert_hotpotqa",
    "convert_2wiki",
    "convert_popqa",
    "evaluate",
    "evaluate_items",
]

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower().translate(_PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def em(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise ValueError("no gold answers")
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(pred_tokens)
    recall = same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1(pred: str, golds: Sequence[str]) -> float:
    if not golds:
        raise ValueError("no gold answers")
    p = normalize_answer(pred).split()
    return max(_f1(p, normalize_answer(g).split()) for g in golds)


@dataclass(frozen=True)
class QAItem:
    id: str
    question: str
    gold_answers: tuple[str, ...]

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"item {self.id!r} has no gold answers")


def load_dataset(path: str | Path) -> list[QAItem]:
    """Read ``{"id", "question", "answers": [...]}`` records, one per line."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                answers = rec["answers"]
                if isinstance(answers, str):
                    answers = [answers]
                items.append(QAItem(str(rec["id"]), rec["question"], tuple(str(a) for a in answers)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from exc
    return items


def _write_items(items: Iterable[QAItem], out: str | Path) -> int:
    n = 0
    with open(out, "w", encoding="utf-8") as fh:
        for it in items:
            fh.write(json.dumps({"id": it.id, "question": it.question, "answers": list(it.gold_answers)},
                                ensure_ascii=False) + "\n")
            n += 1
    return n


def convert_hotpotqa(src: str | Path, out: str | Path) -> int:
    """HotpotQA dev JSON (list of ``{_id, question, answer}``) to the line format."""
    data = json.loads(Path(src).read_text(encoding="utf-8"))
    return _write_items((QAItem(str(d["_id"]), d["question"], (d["answer"],)) for d in data), out)


# 2WikiMultiHopQA ships in the same layout as HotpotQA.
convert_2wiki = convert_hotpotqa


def convert_popqa(src: str | Path, out: str | Path) -> int:
    """PopQA TSV/JSONL with ``possible_answers`` (a JSON list) to the line format."""
    src = Path(src)
    rows = []
    if src.suffix in (".tsv", ".csv"):
        import csv
        with open(src, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh, delimiter="\t" if src.suffix == ".tsv" else ","))
    else:
        with open(src, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    items = []
    for r in rows:
        answers = r["possible_answers"]
        if isinstance(answers, str):
            answers = json.loads(answers)
        items.append(QAItem(str(r["id"]), r["question"], tuple(answers)))
    return _write_items(items, out)


@dataclass
class ItemResult:
    id: str
    question: str
    prediction: str | None
    gold_answers: list[str]
    em: int
    f1: float
    final_turn: int
    stop_reason: str | None
    error: str | None = None


@dataclass
class EvalReport:
    items: list[ItemResult]
    em: float
    f1: float
    turn_histogram: dict[int, float]
    reference_usage: dict[str, float]
    relevance_rate: dict[str, float]
    max_turns: int | None = None
    turn_counts: dict[int, int] = field(default_factory=dict)

    def to_records(self) -> list[dict]:
        out = [{"type": "item", **asdict(it)} for it in self.items]
        out.append({
            "type": "summary",
            "count": len(self.items),
            "em": self.em,
            "f1": self.f1,
            "turn_histogram": {str(k): v for k, v in sorted(self.turn_histogram.items())},
            "turn_counts": {str(k): v for k, v in sorted(self.turn_counts.items())},
            "reference_usage": self.reference_usage,
            "relevance_rate": self.relevance_rate,
        })
        return out

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.to_records():
                fh.write(json.dumps(r, ensure_ascii=False) + "\n")

    def table(self) -> str:
        """Human-readable summary with the per-turn output fractions."""
        lines = [f"items  {len(self.items)}", f"EM     {self.em:.4f}", f"F1     {self.f1:.4f}", "",
                 "Turn   Fraction"]
        last = max([*self.turn_histogram, self.max_turns or 0])
        for t in range(last + 1):
            lines.append(f"t = {t}  {self.turn_histogram.get(t, 0.0):.4f}")
        if self.reference_usage:
            lines += ["", "Model                 Relevance  Usage"]
            for m in sorted(set(self.reference_usage) | set(self.relevance_rate)):
                lines.append(f"{m:<20}  {self.relevance_rate.get(m, 0.0):9.4f}  {self.reference_usage.get(m, 0.0):.4f}")
        return "\n".join(lines)


def _score(item: QAItem, record: AnswerRecord | None, error: str | None) -> ItemResult:
    pred = record.answer if record is not None else None
    return ItemResult(
        id=item.id, question=item.question, prediction=pred, gold_answers=list(item.gold_answers),
        em=em(pred or "", item.gold_answers), f1=f1(pred or "", item.gold_answers),
        final_turn=record.final_turn if record is not None else -1,
        stop_reason=record.stop_reason if record is not None else None, error=error,
    )


def evaluate_items(
    items: Sequence[QAItem],
    pipeline: Pipeline,
    workers: int = 1,
    records_dir: str | Path | None = None,
) -> EvalReport:
    """Run the pipeline on each item and aggregate metrics.

    Items whose run aborts count with an empty prediction and turn -1.
    """

    def one(item: QAItem) -> tuple[ItemResult, AnswerRecord | None]:
        try:
            rec = pipeline.run(item.question)
            err = None
        except PipelineError as exc:
            rec, err = None, str(exc)
        if rec is not None and records_dir is not None:
            Path(records_dir).mkdir(parents=True, exist_ok=True)
            (Path(records_dir) / f"{item.id}.jsonl").write_text(rec.dumps(), encoding="utf-8")
        return _score(item, rec, err), rec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(one, items))
    else:
        outs = [one(it) for it in items]

    results = [r for r, _ in outs]
    n = len(results)
    turns = Counter(r.final_turn for r in results)
    generated: Counter = Counter()
    relevant: Counter = Counter()
    used: Counter = Counter()
    for _, rec in outs:
        if rec is None:
            continue
        for s in rec.turns:
            for d in s.candidates:
                generated[d.source_model] += 1
                relevant[d.source_model] += bool(d.relevance)
        if rec.turns:
            used.update(d.source_model for d in rec.turns[-1].accepted_refs)
    n_used = sum(used.values())
    return EvalReport(
        items=results,
        em=sum(r.em for r in results) / n if n else 0.0,
        f1=sum(r.f1 for r in results) / n if n else 0.0,
        turn_histogram={t: c / n for t, c in sorted(turns.items())},
        reference_usage={m: c / n_used for m, c in sorted(used.items())} if n_used else {},
        relevance_rate={m: relevant[m] / generated[m] for m in sorted(generated)},
        max_turns=pipeline.config.max_turns,
        turn_counts=dict(sorted(turns.items())),
    )


def evaluate(
    dataset_path: str | Path,
    pipeline: Pipeline,
    limit: int | None = None,
    workers: int = 1,
    records_dir: str | Path | None = None,
) -> EvalReport:
    items = load_dataset(dataset_path)
    if limit is not None:
        items = items[:limit]
    return evaluate_items(items, pipeline, workers=workers, records_dir=records_dir)
