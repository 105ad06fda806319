"""Vocabulary, corpora, batching, and the copy / back-translation baselines."""

import json
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .corruption import corrupt
from .dafe import IN
from .model import BOS, EOS, PAD, UNK

log = logging.getLogger(__name__)

RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
NATURAL, COPIED, BACK_TRANSLATED = "natural", "copied", "back_translated"


class UntrainedModelError(RuntimeError):
    pass


class Vocabulary:
    """Shared source/target word vocabulary; ids 0-3 are PAD, BOS, EOS, UNK."""

    def __init__(self, tokens):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, sentence):
        words = sentence.split() if isinstance(sentence, str) else sentence
        return [self.stoi.get(w, UNK) for w in words]

    def decode(self, ids):
        return " ".join(self.itos[i] for i in ids if i not in (PAD, BOS, EOS))

    def to_list(self):
        return self.itos[len(RESERVED):]


def build_vocab(streams, max_size):
    """Keep the ``max_size - 4`` most frequent whitespace tokens.

    Ties are broken lexicographically so ids are stable across runs.
    """
    counts = Counter()
    empty = True
    for stream in streams:
        for line in stream:
            empty = False
            counts.update(line.split())
    if empty or not counts:
        raise ValueError("build_vocab: no tokens in input streams")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in ranked[: max(0, max_size - len(RESERVED))]])


def _freeze(seqs):
    return tuple(tuple(int(t) for t in s) for s in seqs)


@dataclass(frozen=True)
class ParallelCorpus:
    sources: Tuple[Tuple[int, ...], ...]
    targets: Tuple[Tuple[int, ...], ...]
    domain: str = "out"
    provenance: str = NATURAL
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sources", _freeze(self.sources))
        object.__setattr__(self, "targets", _freeze(self.targets))
        if len(self.sources) != len(self.targets):
            raise ValueError(f"{len(self.sources)} sources vs {len(self.targets)} targets")

    def __len__(self):
        return len(self.sources)

    @property
    def pairs(self):
        return list(zip(self.sources, self.targets))

    def swapped(self):
        return ParallelCorpus(self.targets, self.sources, self.domain, self.provenance)

    def target_side(self):
        return MonolingualCorpus(self.targets, self.domain)

    def subset(self, indices):
        idx = list(indices)
        return ParallelCorpus([self.sources[i] for i in idx], [self.targets[i] for i in idx],
                              self.domain, self.provenance)

    def concat(self, other, provenance="mixed"):
        return ParallelCorpus(self.sources + other.sources, self.targets + other.targets,
                              self.domain, provenance)


@dataclass(frozen=True)
class MonolingualCorpus:
    sentences: Tuple[Tuple[int, ...], ...]
    domain: str = IN

    def __post_init__(self):
        object.__setattr__(self, "sentences", _freeze(self.sentences))

    def __len__(self):
        return len(self.sentences)


@dataclass
class Batch:
    src: np.ndarray       # (B, S)
    tgt_in: np.ndarray    # (B, T), BOS-prefixed
    tgt_out: np.ndarray   # (B, T), EOS-suffixed
    domain: str = "out"

    @property
    def src_mask(self):
        return self.src != PAD

    @property
    def tgt_mask(self):
        return self.tgt_out != PAD

    def __len__(self):
        return self.src.shape[0]


def copy_corpus(mono):
    """Pair each monolingual sentence with itself as its own source."""
    if len(mono) == 0:
        raise ValueError("copy_corpus: empty monolingual corpus")
    return ParallelCorpus(mono.sentences, mono.sentences, mono.domain, COPIED)


def back_translate(mono, reverse_model, domain=IN, batch_size=64, checkpoint_id=None):
    """Synthesize sources for ``mono`` with a target->source model.

    Targets are passed through untouched. ``domain`` selects the reverse
    model's domain embedding when it has one.
    """
    if not getattr(reverse_model, "trained", False):
        warnings.warn("back_translate: reverse model is not marked as trained", stacklevel=2)
        raise UntrainedModelError("refusing to back-translate with an untrained model")
    sources = []
    sents = mono.sentences
    max_src = reverse_model.config.max_len
    for i in range(0, len(sents), batch_size):
        chunk = [list(s[:max_src]) for s in sents[i:i + batch_size]]
        for tr in reverse_model.translate_batch(chunk, domain=domain):
            # an empty synthetic source cannot be encoded
            sources.append(tr.tokens or [UNK])
    meta = {"generator": checkpoint_id} if checkpoint_id else {}
    return ParallelCorpus(sources, sents, mono.domain, BACK_TRANSLATED, meta)


def collate(pairs, max_len, domain="out"):
    """Pad ``(src, tgt)`` pairs into a :class:`Batch`; returns (batch, n_truncated)."""
    trunc = 0
    srcs, tgts = [], []
    for s, t in pairs:
        if len(s) > max_len or len(t) > max_len - 1:
            trunc += 1
        srcs.append(list(s[:max_len]) or [UNK])
        tgts.append(list(t[: max_len - 1]))
    B = len(pairs)
    S = max(len(s) for s in srcs)
    T = max(len(t) for t in tgts) + 1
    src = np.full((B, S), PAD, dtype=np.int64)
    tin = np.full((B, T), PAD, dtype=np.int64)
    tout = np.full((B, T), PAD, dtype=np.int64)
    for i, (s, t) in enumerate(zip(srcs, tgts)):
        src[i, : len(s)] = s
        tin[i, 0] = BOS
        tin[i, 1: len(t) + 1] = t
        tout[i, : len(t)] = t
        tout[i, len(t)] = EOS
    return Batch(src, tin, tout, domain), trunc


def _bucketed_order(lengths, batch_size, rng, pool=50):
    """Shuffle, sort by length within pools, then shuffle the batches."""
    idx = rng.permutation(len(lengths))
    span = batch_size * pool
    batches = []
    for start in range(0, len(idx), span):
        chunk = sorted(idx[start:start + span], key=lambda i: lengths[i])
        batches += [chunk[j:j + batch_size] for j in range(0, len(chunk), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def make_batches(corpus, batch_size, seed, max_len=32):
    """One shuffled, length-bucketed epoch over a parallel corpus."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    total = 0
    for chunk in _bucketed_order([len(t) for t in corpus.targets], batch_size, rng):
        batch, n = collate([(corpus.sources[i], corpus.targets[i]) for i in chunk],
                           max_len, corpus.domain)
        total += n
        yield batch
    if total:
        log.info("truncated %d over-length sentences", total)


def lm_batch(sentences, noise, rng, max_len=32, domain=IN):
    """(C(y), y) pairs for the denoising objective."""
    pairs = [(corrupt(y, noise, rng), y) for y in sentences]
    return collate(pairs, max_len, domain)[0]


class Sampler:
    """Endless stream of batches: epoch after epoch, reseeded each epoch.

    For a :class:`MonolingualCorpus` with ``noise`` set, yields denoising
    batches; otherwise translation batches.
    """

    def __init__(self, corpus, batch_size, seed, max_len=32, noise=None, domain=None):
        self.corpus = corpus
        self.batch_size = batch_size
        self.max_len = max_len
        self.noise = noise
        self.domain = domain or corpus.domain
        self.seed = seed
        self.noise_rng = np.random.default_rng([seed, 7])
        self._iter = self._epochs()

    def _epochs(self):
        epoch = 0
        while True:
            rng = np.random.default_rng([self.seed, epoch])
            if isinstance(self.corpus, MonolingualCorpus):
                sents = self.corpus.sentences
                for chunk in _bucketed_order([len(s) for s in sents], self.batch_size, rng):
                    yield lm_batch([sents[i] for i in chunk], self.noise, self.noise_rng,
                                   self.max_len, self.domain)
            else:
                for chunk in _bucketed_order([len(t) for t in self.corpus.targets],
                                             self.batch_size, rng):
                    pairs = [(self.corpus.sources[i], self.corpus.targets[i]) for i in chunk]
                    yield collate(pairs, self.max_len, self.domain)[0]
            epoch += 1

    def __iter__(self):
        return self

    def __next__(self):
        return next(self._iter)


# --- files ----------------------------------------------------------------

def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def load_parallel(prefix, vocab, domain="out"):
    src = read_lines(f"{prefix}.src")
    tgt = read_lines(f"{prefix}.tgt")
    if len(src) != len(tgt):
        raise ValueError(f"{prefix}: {len(src)} source vs {len(tgt)} target lines")
    return ParallelCorpus([vocab.encode(s) for s in src], [vocab.encode(t) for t in tgt], domain)


def load_mono(path, vocab, domain=IN):
    return MonolingualCorpus([vocab.encode(s) for s in read_lines(path)], domain)


def write_parallel(prefix, corpus, vocab):
    """Write ``.src``/``.tgt`` plus a one-line JSON ``.meta`` sidecar."""
    write_lines(f"{prefix}.src", [vocab.decode(s) for s in corpus.sources])
    write_lines(f"{prefix}.tgt", [vocab.decode(t) for t in corpus.targets])
    meta = {"provenance": corpus.provenance, "domain": corpus.domain, "size": len(corpus)}
    meta.update(corpus.meta)
    write_lines(f"{prefix}.meta", [json.dumps(meta, sort_keys=True)])
