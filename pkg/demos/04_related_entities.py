# %% [markdown]
# # Finding related entities for query expansion
#
# Starting from the entities linked in the question, the search collects
# local neighbours (tails of the relation most similar to the question)
# and predicted entities (the tail the embedding model ranks highest over
# the top few relations).

# %%
from kgrag.augment import TrigramSimilarity, augment_query, related_entities
from kgrag.kg import load_kg
from kgrag.kge import TrainConfig, train
from kgrag.synthetic import CASE_STUDY_QUESTION, case_study_dir

d = case_study_dir()
kg = load_kg(d / "kg.tsv", d / "aliases.tsv")
model = train(kg, TrainConfig(seed=0))
sim = TrigramSimilarity.for_graph(kg)

found = related_entities(CASE_STUDY_QUESTION, kg, model, sim, topk=3)
for name in ("query_linked", "local_neighbors", "global_predicted"):
    print(f"{name:<17}", [kg.entity_label(e) for e in getattr(found, name)])

# %% [markdown]
# The expanded query lists those entities ahead of the question.

# %%
print(augment_query(CASE_STUDY_QUESTION, found, kg))

# %% [markdown]
# Relation ranking uses character-trigram TF-IDF similarity.

# %%
for r in kg.relations.labels:
    print(f"{r:<14} {sim.sim('Bernhard Heiden ' + r, CASE_STUDY_QUESTION):.3f}")
