# %% [markdown]
# # Scoring answers against the graph and the stopping threshold
#
# A triple's relative score is its distance from the mean score of the
# head's existing edges. Lower means more consistent with the graph. An
# answer's reliability is the mean over its verifiable triples.

# %%
from kgrag.controller import THETA0_TABLE, ThresholdSchedule, decide, threshold_at
from kgrag.kg import Triple, load_kg
from kgrag.kge import TrainConfig, answer_reliability, relative_triple_score, train
from kgrag.synthetic import case_study_dir

d = case_study_dir()
kg = load_kg(d / "kg.tsv", d / "aliases.tsv")
model = train(kg, TrainConfig(seed=0))

def tri(h, r, t):
    return Triple(kg.entity_id(h), kg.relation_id(r), kg.entity_id(t))

claims = [
    tri("Bernhard Heiden", "student of", "Paul Hindemith"),
    tri("Bernhard Heiden", "student of", "Arnold Schoenberg"),
]
for c in claims:
    print(kg.entity_label(c.tail), round(relative_triple_score(model, kg, c), 3))

# %% [markdown]
# The threshold grows geometrically with the turn, so later turns accept
# answers more easily. The starting value depends on the QA model and the
# dataset.

# %%
for (qa, ds), theta0 in sorted(THETA0_TABLE.items())[:3]:
    sched = ThresholdSchedule(theta0, c=128)
    print(f"{qa:>12} {ds:<22}", [round(threshold_at(sched, t), 2) for t in range(3)])

# %%
# At turn 0 the consistent claim stops the loop and the other one does not.
sched = ThresholdSchedule(THETA0_TABLE[("glm4-9b", "2wikimultihopqa")], c=128)
for c in claims:
    d0 = decide(sched, 0, answer_reliability(model, kg, [c]))
    print(kg.entity_label(c.tail), d0.stop, d0.reason.value)
