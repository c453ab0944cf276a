"""ComplEx embeddings: training, scoring, relative triple scores and tail prediction."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .kg import KnowledgeGraph, Triple, dump_vocab, read_vocab

__all__ = [
    "TrainConfig",
    "ComplExModel",
    "ScoredTriple",
    "Reliability",
    "score",
    "score_many",
    "loss_and_grad",
    "train",
    "filtered_mrr",
    "relative_triple_score",
    "score_triple_detail",
    "answer_reliability",
    "predict_tail",
    "save_checkpoint",
    "load_checkpoint",
    "MAX_REFERENCE_TRIPLES",
]

logger = logging.getLogger(__name__)

MAX_REFERENCE_TRIPLES = 64

_MAGIC = b"CPLX"
_VERSION = 1
_HEADER = struct.Struct("<4sHHIIIq")


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 100
    learning_rate: float = 0.05
    epochs: int = 200
    negatives_per_positive: int = 5
    l2_weight: float = 1e-3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "seed":
                if self.seed < 0:
                    raise ValueError("seed must be non-negative")
            elif not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive, got {getattr(self, f.name)!r}")


@dataclass(eq=False)
class ComplExModel:
    """Complex-valued entity and relation embeddings.

    Tables are stored as float32 so a checkpoint round-trip is bit-exact;
    scoring is carried out in float64.
    """

    entity_re: np.ndarray
    entity_im: np.ndarray
    relation_re: np.ndarray
    relation_im: np.ndarray
    seed: int = 0
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        for name in ("entity_re", "entity_im", "relation_re", "relation_im"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be 2-D")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.entity_re.shape != self.entity_im.shape:
            raise ValueError("entity tables differ in shape")
        if self.relation_re.shape != self.relation_im.shape:
            raise ValueError("relation tables differ in shape")
        if self.entity_re.shape[1] != self.relation_re.shape[1]:
            raise ValueError("entity and relation dims differ")

    @property
    def dim(self) -> int:
        return self.entity_re.shape[1]

    @property
    def num_entities(self) -> int:
        return self.entity_re.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation_re.shape[0]

    def tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.entity_re, self.entity_im, self.relation_re, self.relation_im

    def same_as(self, other: "ComplExModel") -> bool:
        """Bitwise equality of all four tables."""
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tables(), other.tables())
        )

    def check_ids(self, h, r, t) -> None:
        for name, ids, n in (("head", h, self.num_entities), ("relation", r, self.num_relations), ("tail", t, self.num_entities)):
            ids = np.asarray(ids)
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise IndexError(f"{name} id out of range [0, {n})")

    def tail_scores(self, h: int, r: int) -> np.ndarray:
        """Scores of ``(h, r, e)`` for every entity ``e``."""
        self.check_ids(h, r, 0)
        er, ei = self.entity_re.astype(np.float64), self.entity_im.astype(np.float64)
        hr, hi = er[h], ei[h]
        rr, ri = self.relation_re[r].astype(np.float64), self.relation_im[r].astype(np.float64)
        # Re(<h, r, conj(t)>) is linear in t: coefficients on t_re and t_im
        return er @ (hr * rr - hi * ri) + ei @ (hi * rr + hr * ri)


def _trilinear(hr, hi, rr, ri, tr, ti):
    return np.sum(hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr, axis=-1)


def score_many(model: ComplExModel, heads, relations, tails) -> np.ndarray:
    """Vectorised ComplEx score for aligned id arrays."""
    h = np.asarray(heads, dtype=np.int64)
    r = np.asarray(relations, dtype=np.int64)
    t = np.asarray(tails, dtype=np.int64)
    model.check_ids(h, r, t)
    er, ei, rre, rim = (a.astype(np.float64) for a in model.tables())
    return _trilinear(er[h], ei[h], rre[r], rim[r], er[t], ei[t])


def score(model: ComplExModel, h: int, r: int, t: int) -> float:
    """``Re(sum_k e_h[k] * w_r[k] * conj(e_t[k]))``."""
    return float(score_many(model, [h], [r], [t])[0])


# -- training ------------------------------------------------------------------


def loss_and_grad(
    params: Sequence[np.ndarray],
    batch: np.ndarray,
    labels: np.ndarray,
    l2_weight: float,
) -> tuple[float, list[np.ndarray]]:
    """Mean logistic loss plus L2 penalty, with dense gradients.

    Parameters
    ----------
    params : sequence of 4 arrays
        ``(entity_re, entity_im, relation_re, relation_im)``, float64.
    batch : (n, 3) int array
        Head, relation, tail ids.
    labels : (n,) array of +1 / -1
    l2_weight : float
        Weight on the mean squared norm of the embeddings touched by each
        example.

    Returns
    -------
    loss : float
    grads : list of 4 arrays shaped like ``params``
    """
    er, ei, rre, rim = params
    h, r, t = batch[:, 0], batch[:, 1], batch[:, 2]
    y = np.asarray(labels, dtype=np.float64)
    n = len(batch)
    hr, hi, rr, ri, tr, ti = er[h], ei[h], rre[r], rim[r], er[t], ei[t]
    s = _trilinear(hr, hi, rr, ri, tr, ti)
    z = -y * s
    sq = sum(np.sum(a * a, axis=1) for a in (hr, hi, rr, ri, tr, ti))
    loss = float(np.mean(np.logaddexp(0.0, z)) + l2_weight * np.mean(sq))

    dz = (-y * _sigmoid(z) / n)[:, None]
    lam = 2.0 * l2_weight / n
    g_er, g_ei = np.zeros_like(er), np.zeros_like(ei)
    g_rr, g_ri = np.zeros_like(rre), np.zeros_like(rim)
    np.add.at(g_er, h, dz * (rr * tr + ri * ti) + lam * hr)
    np.add.at(g_ei, h, dz * (rr * ti - ri * tr) + lam * hi)
    np.add.at(g_rr, r, dz * (hr * tr + hi * ti) + lam * rr)
    np.add.at(g_ri, r, dz * (hr * ti - hi * tr) + lam * ri)
    np.add.at(g_er, t, dz * (hr * rr - hi * ri) + lam * tr)
    np.add.at(g_ei, t, dz * (hi * rr + hr * ri) + lam * ti)
    return loss, [g_er, g_ei, g_rr, g_ri]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def corrupt(positives: np.ndarray, num_entities: int, per_positive: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform negatives: replace head or tail (p=0.5 each) by a random entity."""
    negs = np.repeat(positives, per_positive, axis=0)
    side = rng.random(len(negs)) < 0.5
    repl = rng.integers(0, num_entities, size=len(negs))
    negs[side, 0] = repl[side]
    negs[~side, 2] = repl[~side]
    return negs


def train(
    kg: KnowledgeGraph,
    cfg: TrainConfig = TrainConfig(),
    triples: Iterable[Triple] | np.ndarray | None = None,
) -> ComplExModel:
    """Fit ComplEx embeddings to the graph.

    Mini-batch stochastic gradient descent with AdaGrad per-coordinate step
    sizes on the logistic loss of positives and uniformly corrupted
    negatives. Single-threaded and fully determined by ``cfg.seed``.

    ``triples`` restricts training to a subset (e.g. a train split); the
    vocabulary always comes from ``kg``.
    """
    data = kg.as_array() if triples is None else np.asarray(list(triples) if not isinstance(triples, np.ndarray) else triples, dtype=np.int64).reshape(-1, 3)
    if len(data) == 0 or kg.num_entities == 0:
        raise ValueError("cannot train on an empty graph")
    rng = np.random.default_rng(cfg.seed)
    bound = 0.5 / np.sqrt(cfg.dim)
    params = [
        rng.uniform(-bound, bound, size=(n, cfg.dim))
        for n in (kg.num_entities, kg.num_entities, kg.num_relations, kg.num_relations)
    ]
    accum = [np.zeros_like(p) for p in params]
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total, seen = 0.0, 0
        for start in range(0, len(data), cfg.batch_size):
            pos = data[order[start:start + cfg.batch_size]]
            neg = corrupt(pos, kg.num_entities, cfg.negatives_per_positive, rng)
            batch = np.concatenate([pos, neg])
            labels = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
            loss, grads = loss_and_grad(params, batch, labels, cfg.l2_weight)
            for p, g, acc in zip(params, grads, accum):
                acc += g * g
                p -= cfg.learning_rate * g / (np.sqrt(acc) + 1e-10)
            total += loss * len(batch)
            seen += len(batch)
        history.append(total / seen)
        if not np.isfinite(history[-1]):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            logger.debug("epoch %d loss %.5f", epoch, history[-1])
    return ComplExModel(*params, seed=cfg.seed, loss_history=tuple(history))


def filtered_mrr(
    model: ComplExModel,
    test: Iterable[Sequence[int]],
    known: Iterable[Sequence[int]],
) -> float:
    """Filtered mean reciprocal rank of true tails.

    Every entity is a candidate except tails of other known true triples
    with the same head and relation. Ties count against the true tail.
    """
    by_hr: dict[tuple[int, int], set[int]] = {}
    for h, r, t in known:
        by_hr.setdefault((int(h), int(r)), set()).add(int(t))
    recips = []
    for h, r, t in test:
        s = model.tail_scores(int(h), int(r))
        mask = np.ones(len(s), dtype=bool)
        mask[list(by_hr.get((int(h), int(r)), ()))] = False
        mask[int(t)] = False
        rank = 1 + int(np.sum(s[mask] >= s[int(t)]))
        recips.append(1.0 / rank)
    if not recips:
        raise ValueError("empty test set")
    return float(np.mean(recips))


# -- relative scores -----------------------------------------------------------


class ScoredTriple(NamedTuple):
    triple: Triple
    kge_score: float
    reference_mean: float | None
    relative_score: float | None  # None: unverifiable


class Reliability(NamedTuple):
    score: float
    verified: int
    unverifiable: int

    @property
    def no_evidence(self) -> bool:
        return self.verified == 0


def _reference_triples(kg: KnowledgeGraph, head: int) -> list[tuple[int, int]]:
    return list(kg.neighbors(head)[:MAX_REFERENCE_TRIPLES])


def score_triple_detail(model: ComplExModel, kg: KnowledgeGraph, tri: Triple) -> ScoredTriple:
    kge = score(model, *tri)
    refs = _reference_triples(kg, tri.head)
    if not refs:
        return ScoredTriple(tri, kge, None, None)
    rels, tails = zip(*refs)
    mean = float(np.mean(score_many(model, [tri.head] * len(refs), rels, tails)))
    return ScoredTriple(tri, kge, mean, abs(kge - mean))


def relative_triple_score(model: ComplExModel, kg: KnowledgeGraph, tri: Triple | None) -> float | None:
    """Distance between a triple's score and the mean score of its head's KG triples.

    Returns ``None`` (unverifiable) when the triple could not be mapped or
    its head has no outgoing KG triples. At most
    :data:`MAX_REFERENCE_TRIPLES` reference triples are used, taken in
    (relation id, tail id) order.
    """
    if tri is None:
        return None
    return score_triple_detail(model, kg, Triple(*tri)).relative_score


def answer_reliability(
    model: ComplExModel,
    kg: KnowledgeGraph,
    triples: Iterable[Triple | None],
) -> Reliability:
    """Sum of relative scores over verifiable triples, with counts."""
    total, verified, unverifiable = 0.0, 0, 0
    for tri in triples:
        rel = relative_triple_score(model, kg, tri)
        if rel is None:
            unverifiable += 1
        else:
            total += rel
            verified += 1
    return Reliability(total, verified, unverifiable)


def predict_tail(model: ComplExModel, h: int, r: int, candidates: Sequence[int] | None = None) -> int:
    """Highest-scoring tail among ``candidates`` (all entities by default); ties go to the lower id."""
    scores = model.tail_scores(h, r)
    if candidates is None:
        return int(np.argmax(scores))
    cand = np.unique(np.asarray(candidates, dtype=np.int64))
    if cand.size == 0:
        raise ValueError("empty candidate set")
    model.check_ids(h, r, cand)
    return int(cand[np.argmax(scores[cand])])


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: ComplExModel, directory: str | Path, kg: KnowledgeGraph | None = None) -> Path:
    """Write ``model.bin`` (and vocabulary TSVs when ``kg`` is given) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "model.bin"
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, 0, model.dim, model.num_entities, model.num_relations, model.seed))
        for arr in model.tables():
            fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))
    if kg is not None:
        dump_vocab(kg, directory)
    return path


def load_checkpoint(directory: str | Path, kg: KnowledgeGraph | None = None) -> ComplExModel:
    """Read a checkpoint; when ``kg`` is given its vocabulary must match the stored one."""
    directory = Path(directory)
    path = directory / "model.bin" if directory.is_dir() else directory
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, _, dim, n_ent, n_rel, seed = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    expected = _HEADER.size + 4 * dim * (2 * n_ent + 2 * n_rel)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    offset = _HEADER.size
    tables = []
    for rows in (n_ent, n_ent, n_rel, n_rel):
        count = rows * dim
        tables.append(np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(rows, dim))
        offset += 4 * count
    model = ComplExModel(*tables, seed=seed)
    if kg is not None:
        if (model.num_entities, model.num_relations) != (kg.num_entities, kg.num_relations):
            raise ValueError("checkpoint vocabulary size does not match the graph")
        ent_file = path.parent / "entities.tsv"
        rel_file = path.parent / "relations.tsv"
        if ent_file.exists() and list(kg.entities.labels) != read_vocab(ent_file):
            raise ValueError("checkpoint entity vocabulary does not match the graph")
        if rel_file.exists() and list(kg.relations.labels) != read_vocab(rel_file):
            raise ValueError("checkpoint relation vocabulary does not match the graph")
    return model
