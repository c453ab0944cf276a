# %% [markdown]
# # Training ComplEx embeddings
#
# The synthetic rule graph encodes ``r(a, b) and s(b, c) -> t(a, c)``.
# Some ``t`` edges are held out. A model that learns the rule ranks the
# held-out tail first.

# %%
import time

import numpy as np

from kgrag.kge import TrainConfig, filtered_mrr, predict_tail, score, train
from kgrag.synthetic import rule_kg

kg, train_split, test_split = rule_kg()
print(f"{kg.num_entities} entities, {len(train_split)} train, {len(test_split)} held out")

start = time.perf_counter()
model = train(kg, TrainConfig(seed=0), train_split)
print(f"trained in {time.perf_counter() - start:.1f} s")
print("filtered MRR on held-out edges:", round(filtered_mrr(model, test_split, kg.triples), 3))

# %% [markdown]
# Scores are real parts of a trilinear product in complex space, so they
# are asymmetric: swapping head and tail changes the score.

# %%
h, r, t = test_split[0]
print("score(h, t, c)   ", round(score(model, h, r, t), 3))
print("score(c, t, h)   ", round(score(model, t, r, h), 3))
print("predicted tail:  ", kg.entity_label(predict_tail(model, h, r)), "expected:", kg.entity_label(t))

# %% [markdown]
# Score distribution over all tails for one query.

# %%
tails = np.arange(kg.num_entities)
all_scores = np.array([score(model, h, r, int(x)) for x in tails])
print("top 3:", [kg.entity_label(int(i)) for i in np.argsort(-all_scores)[:3]])
