"""Synthetic corpora for desk-scale experiments.

The ambiguity task is a word-for-word "language pair" with a 60-token shared
vocabulary. Every sentence contains at least one determiner + ambiguous-noun
phrase. Ambiguous source nouns ``x0..x3`` translate to ``A`` in the
out-of-domain text and to ``B`` in the in-domain text; everything else has a
single translation. The two domains also prefer different common words.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corruption import NoiseSpec
from .dafe import IN, OUT
from .data import MonolingualCorpus, ParallelCorpus, Vocabulary, write_lines, write_parallel
from .model import ModelConfig
from .training import PipelineConfig, TrainConfig

N_COMMON = 24
N_AMBIG = 4


def ambiguity_vocab():
    src = [f"s{i:02d}" for i in range(N_COMMON)] + ["sdet"] + [f"x{k}" for k in range(N_AMBIG)]
    tgt = [f"t{i:02d}" for i in range(N_COMMON)] + ["tdet", "A", "B"]
    return Vocabulary(src + tgt)


@dataclass
class AmbiguityTask:
    vocab: Vocabulary
    parallel_out: ParallelCorpus
    mono_in: MonolingualCorpus
    dev_in: ParallelCorpus
    test_in: ParallelCorpus
    test_out: ParallelCorpus


def _common_weights(domain):
    ranks = np.arange(1, N_COMMON + 1, dtype=float)
    w = 1.0 / ranks
    order = np.arange(N_COMMON) if domain == OUT else np.arange(N_COMMON)[::-1]
    out = np.empty(N_COMMON)
    out[order] = w
    return out / out.sum()


def ambiguity_sentence(rng, domain, min_phrases=4, max_phrases=7, p_ambig=0.3):
    """One (source words, target words) pair drawn from ``domain``."""
    weights = _common_weights(domain)
    sense = "A" if domain == OUT else "B"
    n = int(rng.integers(min_phrases, max_phrases + 1))
    slots = rng.random(n) < p_ambig
    if not slots.any():
        slots[rng.integers(n)] = True
    src, tgt = [], []
    for amb in slots:
        if amb:
            src += ["sdet", f"x{int(rng.integers(N_AMBIG))}"]
            tgt += ["tdet", sense]
        else:
            i = int(rng.choice(N_COMMON, p=weights))
            src.append(f"s{i:02d}")
            tgt.append(f"t{i:02d}")
    return src, tgt


def _parallel(rng, vocab, domain, n):
    pairs = [ambiguity_sentence(rng, domain) for _ in range(n)]
    return ParallelCorpus([vocab.encode(s) for s, _ in pairs],
                          [vocab.encode(t) for _, t in pairs], domain)


def ambiguity_task(seed=0, n_parallel=2000, n_mono=2000, n_dev=200, n_test=200):
    rng = np.random.default_rng(seed)
    vocab = ambiguity_vocab()
    parallel_out = _parallel(rng, vocab, OUT, n_parallel)
    mono_in = _parallel(rng, vocab, IN, n_mono).target_side()
    return AmbiguityTask(vocab, parallel_out, mono_in,
                         _parallel(rng, vocab, IN, n_dev),
                         _parallel(rng, vocab, IN, n_test),
                         _parallel(rng, vocab, OUT, n_test))


def random_sentences(rng, n, vocab_size, min_len=3, max_len=8, first_id=4):
    return [rng.integers(first_id, vocab_size, int(rng.integers(min_len, max_len + 1))).tolist()
            for _ in range(n)]


def copy_task(seed=0, n=200, vocab_size=20, min_len=3, max_len=8, domain=OUT):
    sents = random_sentences(np.random.default_rng(seed), n, vocab_size, min_len, max_len)
    return ParallelCorpus(sents, sents, domain)


def reversal_task(seed=0, n=400, vocab_size=20, min_len=3, max_len=8, domain=OUT):
    sents = random_sentences(np.random.default_rng(seed), n, vocab_size, min_len, max_len)
    return ParallelCorpus(sents, [s[::-1] for s in sents], domain)


# Heavier word dropout than the library default: with light noise the encoder
# can reconstruct sentences without relying on the domain vector at all.
AMBIGUITY_NOISE = NoiseSpec(p_drop=0.4, k=3)


def ambiguity_config(vocab_size, seed=0, rounds=2000):
    """The desk-scale setup used for the ambiguity experiment."""
    model = ModelConfig(num_layers=2, hidden_size=32, num_heads=4, ff_size=64,
                        vocab_size=vocab_size, max_len=24)
    return PipelineConfig(model=model, noise=AMBIGUITY_NOISE,
                          train=TrainConfig(rounds=rounds, seed=seed), use_dev=False)


def write_ambiguity_task(task, directory, seed=0, rounds=2000):
    """Write corpora, vocabulary and a ready-to-run config file under ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    v = task.vocab
    write_parallel(d / "train.out", task.parallel_out, v)
    write_lines(d / "mono.in", [v.decode(s) for s in task.mono_in.sentences])
    write_parallel(d / "dev.in", task.dev_in, v)
    write_parallel(d / "test.in", task.test_in, v)
    write_parallel(d / "test.out", task.test_out, v)
    write_lines(d / "vocab.txt", v.to_list())
    cfg = ambiguity_config(len(v), seed, rounds)
    lines = [f"model.{k} = {val}" for k, val in cfg.model.to_dict().items()]
    lines += [f"noise.p_drop = {cfg.noise.p_drop}", f"noise.k = {cfg.noise.k}",
              f"train.rounds = {rounds}", f"train.seed = {seed}", "train.use_dev = False",
              "data.vocab = vocab.txt", "data.parallel_out = train.out",
              "data.mono_in = mono.in", "data.dev = dev.in",
              "eval.test = test.in", "eval.domain = in"]
    write_lines(d / "toy.cfg", lines)
    return d / "toy.cfg"
