# %% [markdown]
# The denoising noise C(y) and corpus BLEU, side by side.

# %%
import numpy as np

from dafe import NoiseSpec, bleu, corrupt

rng = np.random.default_rng(3)
sentence = "the patient was given two doses of the drug".split()
ids = list(range(len(sentence)))
for spec in (NoiseSpec(0.0, 0), NoiseSpec(0.1, 3), NoiseSpec(0.4, 3)):
    out = corrupt(ids, spec, rng)
    print(f"p_drop={spec.p_drop} k={spec.k}:", " ".join(sentence[i] for i in out))

# %%
# Survivors never move more than k places from where they would be after dropping.
spec = NoiseSpec(0.1, 3)
moves = []
for _ in range(20000):
    out = corrupt(ids, spec, rng)
    moves += [abs(r - j) for j, r in enumerate(np.argsort(np.argsort(out)))]
print("largest displacement over 20k draws:", max(moves))

# %%
refs = ["the patient was given two doses of the drug", "the court dismissed the appeal"]
hyps = ["the patient received two doses of the drug", "the court dismissed the appeal"]
print(bleu(hyps, refs))
print(bleu(hyps, refs).to_json())
