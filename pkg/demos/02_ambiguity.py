# %% [markdown]
# Domain-aware feature embeddings on a toy "language pair" where the ambiguous
# nouns x0..x3 translate to A in out-of-domain text and to B in in-domain text.
# Only out-of-domain parallel data exists; in-domain text is target-side only.
#
#     python demos/02_ambiguity.py [rounds]      (2000 reproduces the tests; ~2 min per model)

# %%
import sys

from dafe import IN, OUT, Corpora, evaluate_model, probe_swap, run_pipeline
from dafe.toy import ambiguity_config, ambiguity_task

rounds = int(sys.argv[1]) if len(sys.argv) > 1 else 600
task = ambiguity_task(seed=0)
v = task.vocab
print("out-of-domain pair:", v.decode(task.parallel_out.sources[0]), "=>", v.decode(task.parallel_out.targets[0]))
print("in-domain target  :", v.decode(task.mono_in.sentences[0]))

# %%
corpora = Corpora(task.parallel_out, task.mono_in, dev=task.dev_in)
cfg = ambiguity_config(len(v), seed=0, rounds=rounds)
models = {s: run_pipeline(s, corpora, cfg).model for s in ("baseline", "dafe")}

# %%
# The baseline only ever saw A. DAFE learned what in-domain text looks like
# through the denoising LM steps and routes that through the In vector.
for name, m in models.items():
    print(f"{name:9s} in-domain test BLEU  with In: {evaluate_model(m, task.test_in, IN).bleu:6.2f}"
          f"  with Out: {evaluate_model(m, task.test_in, OUT).bleu:6.2f}")

# %%
# Swap the domain embedding on one sentence, everything else fixed.
src = task.test_in.sources[0]
print("source:", v.decode(src))
for d, toks in probe_swap(models["dafe"], src, [IN, OUT]).items():
    print(f"  {d:3s}", v.decode(toks))
