# %% [markdown]
# Back-translation: a target->source model turns monolingual target text into
# synthetic parallel data. Here the "reverse direction" is token reversal,
# so we can check the synthetic sources exactly.

# %%
import numpy as np

from dafe.data import MonolingualCorpus, back_translate, make_batches
from dafe.model import DafeTransformer, ModelConfig
from dafe.toy import random_sentences, reversal_task
from dafe.training import Adam, Trainer

corpus = reversal_task(seed=0, n=400)
cfg = ModelConfig(num_layers=2, hidden_size=32, num_heads=4, ff_size=64, vocab_size=20, max_len=12)
reverse = DafeTransformer(cfg, seed=0, use_dafe=False)
trainer = Trainer(reverse, Adam(lr=3e-3))
for epoch in range(80):
    losses = [trainer.mt_step(b) for b in make_batches(corpus, 20, seed=epoch, max_len=12)]
    if epoch % 20 == 0:
        print(f"epoch {epoch:2d} loss {np.mean(losses):.3f}")
reverse.trained = True

# %%
mono = MonolingualCorpus(random_sentences(np.random.default_rng(99), 5, 20))
synthetic = back_translate(mono, reverse, checkpoint_id="reversal-demo")
for src, tgt in synthetic.pairs:
    print(list(tgt), "<=", list(src))
print("provenance:", synthetic.provenance, synthetic.meta)

# %%
# An untrained model is refused outright.
try:
    back_translate(mono, DafeTransformer(cfg, seed=1, use_dafe=False))
except RuntimeError as e:
    print("refused:", e)
