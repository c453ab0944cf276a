# %% [markdown]
# # Evaluating exact match, F1 and stopping turns
#
# Answers are normalised (lowercase, no punctuation or articles) before
# comparison. F1 is token overlap against the best gold answer.

# %%
from kgrag.evaluation import em, f1, normalize_answer

for pred, golds in [("The Eiffel Tower", ["Eiffel Tower"]), ("Paul Hindemith, German", ["Paul Hindemith"])]:
    print(repr(normalize_answer(pred)), em(pred, golds), round(f1(pred, golds), 3))

# %% [markdown]
# A whole dataset run reports how often the loop stopped at each turn.
# Here the case-study pack answers two questions. Its scripted answers
# are full sentences, so EM is 0 and F1 reflects partial token overlap.

# %%
import json
import tempfile
from pathlib import Path

from kgrag.config import build_pipeline, load_config
from kgrag.evaluation import evaluate
from kgrag.synthetic import CASE_STUDY_QUESTION, case_study_dir

pipe = build_pipeline(load_config(case_study_dir() / "config.yaml"))
with tempfile.TemporaryDirectory() as tmp:
    data = Path(tmp) / "qa.jsonl"
    rows = [{"id": "q1", "question": CASE_STUDY_QUESTION, "answers": ["Paul Hindemith"]},
            {"id": "q2", "question": CASE_STUDY_QUESTION, "answers": ["Arnold Schoenberg"]}]
    data.write_text("".join(json.dumps(r) + "\n" for r in rows))
    report = evaluate(data, pipe)
print(report.table())
