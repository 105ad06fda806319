# %% [markdown]
# How DAFE and back-translation behave as the out-of-domain parallel corpus
# shrinks. Dev BLEU per (fraction, strategy), written as TSV for plotting.
#
#     python demos/06_low_resource.py [rounds] [fractions]

# %%
import sys

from dafe import Corpora, low_resource_sweep
from dafe.toy import ambiguity_config, ambiguity_task

rounds = int(sys.argv[1]) if len(sys.argv) > 1 else 400
fractions = [float(f) for f in (sys.argv[2] if len(sys.argv) > 2 else "0.01,0.1,1.0").split(",")]

task = ambiguity_task(seed=0)
corpora = Corpora(task.parallel_out, task.mono_in, dev=task.dev_in)
table = low_resource_sweep(fractions, ["back", "dafe"], corpora,
                           ambiguity_config(len(task.vocab), seed=0, rounds=rounds))
print(table.to_tsv(), end="")
