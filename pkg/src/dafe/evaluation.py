"""Corpus BLEU, matched/mismatched domain evaluation and the low-resource sweep."""

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, replace

import numpy as np

from .dafe import IN, MT

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: tuple = ()
    totals: tuple = ()

    def __str__(self):
        p = "/".join(f"{100 * x:.1f}" for x in self.precisions)
        return (f"BLEU = {self.bleu:.2f}, {p} (BP={self.brevity_penalty:.3f}, "
                f"hyp_len={self.hyp_len}, ref_len={self.ref_len})")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def _tokens(s):
    return s.split() if isinstance(s, str) else list(s)


def ngram_stats(hyp, ref, max_n=4):
    """Clipped matches and hypothesis n-gram totals for one sentence pair."""
    matches, totals = [0] * max_n, [0] * max_n
    for n in range(1, max_n + 1):
        h = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
        r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
        matches[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        totals[n - 1] = max(len(hyp) - n + 1, 0)
    return matches, totals


def bleu_from_stats(matches, totals, hyp_len, ref_len, smooth=False):
    """Geometric mean of clipped precisions times the brevity penalty.

    An order with no hypothesis n-grams at all (every sentence shorter than
    n) counts as precision 1. ``smooth`` adds one to numerator and
    denominator for orders n >= 2.
    """
    precisions = []
    for n, (m, t) in enumerate(zip(matches, totals)):
        if smooth and n > 0:
            m, t = m + 1, t + 1
        precisions.append(m / t if t else 1.0)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1 - ref_len / hyp_len)
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions))
    return BleuReport(score, tuple(precisions), bp, hyp_len, ref_len, tuple(matches), tuple(totals))


def bleu(hypotheses, references, max_n=4, smooth=False):
    """Corpus BLEU over whitespace-token strings or token lists."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("bleu needs at least one sentence")
    matches, totals = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hypotheses, references):
        h, r = _tokens(h), _tokens(r)
        m, t = ngram_stats(h, r, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        hyp_len += len(h)
        ref_len += len(r)
    return bleu_from_stats(matches, totals, hyp_len, ref_len, smooth)


def translate_corpus(model, sources, domain=IN, batch_size=64, task=MT):
    out = []
    for i in range(0, len(sources), batch_size):
        chunk = [list(s[: model.config.max_len]) for s in sources[i:i + batch_size]]
        out += [t.tokens for t in model.translate_batch(chunk, domain=domain, task=task)]
    return out


def evaluate_model(model, test, domain=IN, smooth=False):
    """Greedy-decode every source with ``domain``'s embedding and score it."""
    hyps = translate_corpus(model, test.sources, domain)
    return bleu(hyps, [list(t) for t in test.targets], smooth=smooth)


def subsample(corpus, fraction, seed):
    """floor(fraction * N) pairs in original order; fraction 1.0 is the corpus itself."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside (0, 1]")
    if fraction == 1.0:
        return corpus
    n = int(math.floor(fraction * len(corpus)))
    rng = np.random.default_rng(seed)
    return corpus.subset(sorted(rng.choice(len(corpus), size=n, replace=False).tolist()))


@dataclass
class SweepTable:
    fractions: list
    strategies: list
    cells: dict          # (fraction, strategy) -> BLEU
    sizes: dict          # fraction -> sentences used
    skipped: list

    def rows(self):
        for f in self.fractions:
            for s in self.strategies:
                if (f, s) in self.cells:
                    yield f, s, self.sizes[f], self.cells[(f, s)]

    def to_tsv(self):
        lines = ["fraction\tstrategy\tsentences\tbleu"]
        lines += [f"{f}\t{s}\t{n}\t{b:.4f}" for f, s, n, b in self.rows()]
        return "\n".join(lines) + "\n"


def low_resource_sweep(fractions, strategies, corpora, config, seed=None, min_sentences=10,
                       smooth=False):
    """Dev BLEU for each (fraction of the parallel data, strategy) cell."""
    from .training import run_pipeline

    if corpora.dev is None:
        raise ValueError("low_resource_sweep needs a dev corpus")
    seed = config.train.seed if seed is None else seed
    cells, sizes, skipped = {}, {}, []
    for f in fractions:
        part = subsample(corpora.parallel_out, f, seed)
        if len(part) < min_sentences:
            log.warning("fraction %s leaves %d sentences (< %d); skipped", f, len(part), min_sentences)
            skipped.append(f)
            continue
        sizes[f] = len(part)
        # out-of-domain LM data derived from the parallel targets shrinks with them
        derived = corpora.mono_out is None or corpora.mono_out.sentences == corpora.parallel_out.targets
        sub = replace(corpora, parallel_out=part, mono_out=None if derived else corpora.mono_out)
        for s in strategies:
            result = run_pipeline(s, sub, config)
            cells[(f, s)] = evaluate_model(result.model, corpora.dev, result.domain, smooth).bleu
    return SweepTable(list(fractions), list(strategies), cells, sizes, skipped)
