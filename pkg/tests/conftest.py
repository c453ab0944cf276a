import numpy as np
import pytest

from kgrag.kg import KnowledgeGraph, load_kg
from kgrag.kge import ComplExModel, TrainConfig, train
from kgrag.synthetic import case_study_dir

HEIDEN_LINES = [
    ("Bernhard Heiden", "student of", "Paul Hindemith"),
    ("Paul Hindemith", "country of citizenship", "Germany"),
]


def make_model(ent, rel):
    """Model from complex-valued tables given as nested lists."""
    ent = np.asarray(ent, dtype=np.complex128)
    rel = np.asarray(rel, dtype=np.complex128)
    return ComplExModel(ent.real, ent.imag, rel.real, rel.imag)


@pytest.fixture
def heiden_kg():
    return KnowledgeGraph.from_labeled(HEIDEN_LINES, [("Hindemith", "Paul Hindemith")])


@pytest.fixture(scope="session")
def case_kg():
    d = case_study_dir()
    return load_kg(d / "kg.tsv", d / "aliases.tsv")


@pytest.fixture(scope="session")
def case_model(case_kg):
    return train(case_kg, TrainConfig(dim=100, epochs=200, seed=0))


def write_tsv(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")
    return path


# -- pipeline helpers -------------------------------------------------------------

from kgrag.gateway import ANSWER, QUERY_GEN, RELEVANCE, TRIPLE_EXTRACT, FixtureBackend, Gateway, Trace, knowledge_role  # noqa: E402
from kgrag.pipeline import Pipeline, PipelineConfig  # noqa: E402


def make_pipeline(kg, model, records, models, trace=None, **cfg):
    backend = FixtureBackend(records)
    gateway = Gateway.with_backend(backend, list(models), trace=trace if trace is not None else Trace(timing=False))
    cfg.setdefault("theta0", 2.0)
    return Pipeline(kg, model, gateway, PipelineConfig(**cfg)), backend


KG_CLAIMS = [
    "(Bernhard Heiden, student of, Paul Hindemith)",
    "(Paul Hindemith, country of citizenship, Germany)",
    "(Arnold Schoenberg, place of birth, Vienna)",
    "(Bernhard Heiden, student of, Arnold Schoenberg)",
    "(Alban Berg, country of citizenship, Germany)",
    "(Nobody, knows, Nothing)",
]


def fuzz_scenario(seed, kg, model):
    """A random fixture pack over the case-study graph; returns the pipeline and its backend."""
    rng = np.random.default_rng(seed)
    n_models = int(rng.integers(1, 5))
    models = [f"km{i}" for i in range(n_models)]
    max_turns = int(rng.integers(0, 4))
    recs = []
    for t in range(max_turns + 1):
        claims = rng.choice(KG_CLAIMS, size=int(rng.integers(0, 3)), replace=False)
        recs.append({"role": ANSWER, "turn": t, "response": f"answer {t} " + " ".join(claims)})
        recs.append({"role": QUERY_GEN, "turn": t, "response": "" if rng.random() < 0.3 else f"refined query {t} about Bernhard Heiden"})
        for m in models:
            for variant, marker in (("plain", None), ("kg", "Related entities:")):
                rec = {"role": knowledge_role(m), "turn": t}
                if marker:
                    rec["contains"] = marker
                roll = rng.random()
                if roll < 0.15:
                    rec["error"] = "timeout"
                else:
                    # some models repeat text across variants or turns to exercise dedup
                    tag = f"{m}" if roll < 0.3 else f"{m}-{variant}-{t}"
                    claims = rng.choice(KG_CLAIMS, size=int(rng.integers(0, 3)), replace=False)
                    rec["response"] = f"doc <{tag}> " + " ".join(claims)
                recs.append(rec)
    for tag in {r["response"].split(">")[0] + ">" for r in recs if r["role"].startswith("knowledge_model") and "response" in r}:
        roll = rng.random()
        rel = {"role": RELEVANCE, "contains": tag}
        if roll < 0.1:
            rel["error"] = "down"
        else:
            rel["response"] = "Yes" if roll < 0.6 else "No"
        recs.append(rel)
    recs.append({"role": RELEVANCE, "response": "unclear"})
    recs.append({"role": TRIPLE_EXTRACT, "response": "none"})
    for c in KG_CLAIMS:
        recs.append({"role": TRIPLE_EXTRACT, "contains": c, "response": c})
    cfg = dict(
        theta0=float(rng.choice([0.01, 0.1, 1.0, 2.0, 10.0])),
        max_turns=max_turns,
        k=int(rng.integers(0, 6)),
        budget_mode=str(rng.choice(["k_plus_t", "k"])),
    )
    return make_pipeline(kg, model, recs, models, **cfg)


def loop_violations(record, pipeline, backend):
    """Invariant breaches of one run (empty list when the run is well-formed)."""
    cfg = pipeline.config
    bad = []
    answer_calls = sum(1 for ex in pipeline.gateway.trace.exchanges if ex.role == ANSWER)
    if answer_calls > cfg.max_turns + 1:
        bad.append(f"{answer_calls} answer calls for max_turns={cfg.max_turns}")
    if len(record.turns) != record.final_turn + 1:
        bad.append("trace length differs from final turn + 1")
    if record.stop_reason not in ("below_threshold", "max_turns"):
        bad.append(f"bad stop reason {record.stop_reason}")
    prev: list = []
    for state in record.turns:
        keys = [d.key for d in state.accepted_refs]
        if [d.key for d in prev] != keys[:len(prev)]:
            bad.append(f"turn {state.t}: accepted set not append-only")
        if len(set(keys)) != len(keys):
            bad.append(f"turn {state.t}: duplicate accepted reference")
        added = state.accepted_refs[len(prev):]
        if state.t > 0 and len(added) > cfg.budget(state.t):
            bad.append(f"turn {state.t}: {len(added)} additions > budget {cfg.budget(state.t)}")
        cand_keys = {d.key for d in state.candidates}
        for d in added:
            if d.key not in cand_keys:
                bad.append(f"turn {state.t}: accepted doc not among candidates")
        for d in state.accepted_refs:
            if d.relevance is not True:
                bad.append(f"turn {state.t}: accepted doc without relevance=True")
            if d.turn_added > state.t:
                bad.append(f"turn {state.t}: doc from the future")
            if d.factual_score is not None and d.factual_score < 0:
                bad.append(f"turn {state.t}: negative factual score")
        prev = state.accepted_refs
    return bad


def turn_dataset(path, stop_turns, golds=None):
    """Fixture dataset whose item i stops at turn ``stop_turns[i]``.

    Returns the dataset path and the fixture records. The answer at the
    stopping turn carries a graph-consistent triple; earlier answers carry
    none, so the loop keeps retrieving.
    """
    import json

    items, recs = [], []
    for i, s in enumerate(stop_turns):
        q = f"Question number {i} about Bernhard Heiden?"
        items.append({"id": f"q{i}", "question": q, "answers": [golds[i] if golds else f"answer {i}"]})
        for t in range(s + 1):
            text = f"answer {i}" + (" PASS" if t == s else " (unsure)")
            recs.append({"role": ANSWER, "turn": t, "contains": f"Question number {i} ", "response": text})
    recs += [
        {"role": TRIPLE_EXTRACT, "contains": "PASS", "response": "(Bernhard Heiden, student of, Paul Hindemith)"},
        {"role": TRIPLE_EXTRACT, "response": "none"},
        {"role": RELEVANCE, "response": "Yes"},
        {"role": QUERY_GEN, "response": "follow-up query"},
        {"role": knowledge_role("A"), "response": "A passage."},
        {"role": knowledge_role("B"), "response": "B passage."},
        {"role": knowledge_role("B"), "contains": "Related entities:", "response": "B passage with entities."},
    ]
    path.write_text("".join(json.dumps(x) + "\n" for x in items), encoding="utf-8")
    return path, recs
