# %% [markdown]
# # Loading a graph and linking entities
#
# The bundled case study is a small graph about composers and their
# students. Loading it builds id vocabularies for entities and relations,
# and the alias file lets surface forms like "Hindemith" resolve to the
# canonical label.

# %%
from kgrag.kg import GraphStats, load_kg
from kgrag.synthetic import case_study_dir

d = case_study_dir()
kg = load_kg(d / "kg.tsv", d / "aliases.tsv")
print(GraphStats.of(kg))

# %% [markdown]
# Linking scans the text for the longest matching labels or aliases and
# returns entity ids in order of appearance.

# %%
for text in ["Whose teacher was Bernhard Heiden's?", "Did Hindemith teach in Germany?"]:
    ids = kg.link(text)
    print(text, "->", [kg.entity_label(e) for e in ids])

# %% [markdown]
# Outgoing edges of an entity are (relation, tail) pairs.

# %%
heiden = kg.entity_id("Bernhard Heiden")
for r, t in kg.neighbors(heiden):
    print("Bernhard Heiden", kg.relation_label(r), kg.entity_label(t))
