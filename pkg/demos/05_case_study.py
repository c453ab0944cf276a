# %% [markdown]
# # End-to-end run with scripted language models
#
# The case-study pack binds every LLM role to fixture responses, so the run
# is deterministic and offline. At turn 0 the model answers with the wrong
# teacher. The graph disagrees, so the loop retrieves references and tries
# again.

# %%
from kgrag.config import build_pipeline, load_config
from kgrag.gateway import Trace
from kgrag.synthetic import CASE_STUDY_QUESTION, case_study_dir

trace = Trace(timing=False)
pipe = build_pipeline(load_config(case_study_dir() / "config.yaml"), trace=trace)
rec = pipe.run(CASE_STUDY_QUESTION)

for st in rec.turns:
    print(f"turn {st.t}: reliability {st.reliability:.3f} vs theta {st.theta_t:.3f} -> {st.reason}")
    for c in st.triples:
        print("   ", c.head, "|", c.relation, "|", c.tail, "|", c.relative_score)
    print("    answer:", st.answer)

# %%
print("final:", rec.answer, f"({rec.stop_reason})")
print("LLM exchanges:", len(trace.exchanges))
last = rec.turns[-1]
print(f"{len(last.candidates)} candidates, {len(last.accepted_refs)} accepted")
