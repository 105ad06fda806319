"""Small pre-norm Transformer encoder-decoder with DAFE hooks on the encoder."""

from dataclasses import asdict, dataclass
from typing import List, NamedTuple

import numpy as np

from . import numerics as nx
from .dafe import IN, MT, FeatureEmbeddingTable, UnknownIdError
from .numerics import Parameter

PAD, BOS, EOS, UNK = 0, 1, 2, 3


class LengthError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 4
    ff_size: int = 128
    vocab_size: int = 1000
    max_len: int = 32
    dropout_rate: float = 0.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if min(self.num_layers, self.hidden_size, self.ff_size, self.vocab_size, self.max_len) < 1:
            raise ValueError("model sizes must be positive")

    @classmethod
    def full_size(cls, vocab_size=50000):
        """The 4-layer, 512-wide configuration from the original experiments."""
        return cls(num_layers=4, hidden_size=512, num_heads=8, ff_size=2048,
                   vocab_size=vocab_size, max_len=256, dropout_rate=0.1)

    def to_dict(self):
        return asdict(self)


@dataclass
class EncoderState:
    hidden: List[nx.Tensor]   # index 0..L, each (B, S, d)
    src_mask: np.ndarray      # (B, S) True on real tokens

    @property
    def memory(self):
        return self.hidden[-1]


class Translation(NamedTuple):
    tokens: list
    truncated: bool


def positional_encoding(seq_len, d, max_len=None):
    if max_len is not None and seq_len > max_len:
        raise LengthError(f"sequence length {seq_len} exceeds max_len {max_len}")
    pos = np.arange(seq_len)[:, None]
    i2 = np.arange(0, d, 2)
    angle = pos / np.power(10000.0, i2 / d)
    pe = np.zeros((seq_len, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def multi_head_attention(q_in, kv_in, mask, p, num_heads):
    """Scaled dot-product attention over ``num_heads`` heads.

    ``q_in`` is (B, Tq, d), ``kv_in`` (B, Tk, d); ``mask`` broadcasts to
    (B, heads, Tq, Tk). ``p`` maps wq/bq/wk/bk/wv/bv/wo/bo to Parameters.
    """
    B, Tq, d = q_in.shape
    Tk = kv_in.shape[1]
    dh = d // num_heads

    def heads(x, T):
        return nx.transpose(nx.reshape(x, (B, T, num_heads, dh)), (0, 2, 1, 3))

    q = heads(nx.affine(q_in, p["wq"], p["bq"]), Tq)
    k = heads(nx.affine(kv_in, p["wk"], p["bk"]), Tk)
    v = heads(nx.affine(kv_in, p["wv"], p["bv"]), Tk)
    scores = nx.scale(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = nx.softmax_masked(scores, mask)
    ctx = nx.transpose(nx.matmul(attn, v), (0, 2, 1, 3))
    return nx.affine(nx.reshape(ctx, (B, Tq, d)), p["wo"], p["bo"])


def causal_mask(t):
    return np.tril(np.ones((t, t), dtype=bool))


class DafeTransformer:
    """Encoder-decoder whose encoder layer outputs receive domain/task vectors.

    ``use_dafe=False`` builds the plain base network with no embedding table.
    """

    def __init__(self, config: ModelConfig, seed=0, use_dafe=True,
                 domains=(IN, "out"), tasks=(MT, "lm")):
        self.config = config
        self.rng = np.random.default_rng([seed, 0xD0])
        self.training = False
        self.trained = False
        self._base = {}
        init = np.random.default_rng([seed, 0x1A])
        c = config
        d, ff, V = c.hidden_size, c.ff_size, c.vocab_size

        def uni(pid, shape, fan_in):
            lim = 1.0 / np.sqrt(fan_in)
            self._base[pid] = Parameter(pid, init.uniform(-lim, lim, shape), "base")

        def const(pid, shape, value):
            self._base[pid] = Parameter(pid, np.full(shape, value, dtype=np.float64), "base")

        def attention(prefix):
            for name in ("q", "k", "v", "o"):
                uni(f"{prefix}.w{name}", (d, d), d)
                const(f"{prefix}.b{name}", (d,), 0.0)

        def norm(prefix):
            const(f"{prefix}.gain", (d,), 1.0)
            const(f"{prefix}.bias", (d,), 0.0)

        def ffn(prefix):
            uni(f"{prefix}.w1", (d, ff), d)
            const(f"{prefix}.b1", (ff,), 0.0)
            uni(f"{prefix}.w2", (ff, d), ff)
            const(f"{prefix}.b2", (d,), 0.0)

        uni("base.embed", (V, d), d)
        for l in range(1, c.num_layers + 1):
            pre = f"base.enc.{l}"
            norm(f"{pre}.ln1")
            attention(f"{pre}.attn")
            norm(f"{pre}.ln2")
            ffn(f"{pre}.ffn")
        norm("base.enc.final_ln")
        for l in range(1, c.num_layers + 1):
            pre = f"base.dec.{l}"
            norm(f"{pre}.ln1")
            attention(f"{pre}.self")
            norm(f"{pre}.ln2")
            attention(f"{pre}.cross")
            norm(f"{pre}.ln3")
            ffn(f"{pre}.ffn")
        norm("base.dec.final_ln")
        uni("base.out.w", (d, V), d)
        const("base.out.b", (V,), 0.0)

        self.dafe = FeatureEmbeddingTable(c.num_layers, d, domains, tasks) if use_dafe else None

    # -- parameters ------------------------------------------------------

    def base_parameters(self):
        return list(self._base.values())

    def parameters(self):
        extra = self.dafe.parameters() if self.dafe is not None else []
        return self.base_parameters() + extra

    def named(self, prefix):
        cache = self.__dict__.setdefault("_named", {})
        if prefix not in cache:
            n = len(prefix) + 1
            cache[prefix] = {k[n:]: v for k, v in self._base.items() if k.startswith(prefix + ".")}
        return cache[prefix]

    def param(self, pid):
        for p in self.parameters():
            if p.id == pid:
                return p
        raise KeyError(pid)

    def zero_output_projection(self):
        self._base["base.out.w"].data[...] = 0.0
        self._base["base.out.b"].data[...] = 0.0

    # -- forward ---------------------------------------------------------

    def _ids(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise IndexError(f"token id outside [0, {self.config.vocab_size})")
        if ids.shape[1] > self.config.max_len:
            raise LengthError(f"length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        return ids

    def _embed(self, ids):
        d = self.config.hidden_size
        x = nx.scale(nx.embedding(self._base["base.embed"], ids), np.sqrt(d))
        x = nx.add_const(x, positional_encoding(ids.shape[1], d)[None])
        return nx.dropout(x, self._drop, self.rng)

    @property
    def _drop(self):
        return self.config.dropout_rate if self.training else 0.0

    def _norm(self, x, prefix):
        return nx.layer_norm(x, self._base[f"{prefix}.gain"], self._base[f"{prefix}.bias"],
                             self.config.ln_eps)

    def _ffn(self, x, prefix):
        p = self._base
        h = nx.relu(nx.affine(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
        return nx.affine(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])

    def _compose(self, h, domain, task, layer):
        if self.dafe is None:
            return h
        return self.dafe.compose(h, domain, task, layer)

    def encode(self, src_ids, domain=IN, task=MT):
        ids = self._ids(src_ids)
        if self.dafe is not None:
            if domain not in self.dafe.domains:
                raise UnknownIdError(f"unknown domain {domain!r}")
            if task not in self.dafe.tasks:
                raise UnknownIdError(f"unknown task {task!r}")
        src_mask = ids != PAD
        key_mask = src_mask[:, None, None, :]
        heads = self.config.num_heads
        h = self._compose(self._embed(ids), domain, task, 0)
        hidden = [h]
        for l in range(1, self.config.num_layers + 1):
            pre = f"base.enc.{l}"
            a = self._norm(h, f"{pre}.ln1")
            a = multi_head_attention(a, a, key_mask, self.named(f"{pre}.attn"), heads)
            h2 = nx.add(h, nx.dropout(a, self._drop, self.rng))
            f = self._ffn(self._norm(h2, f"{pre}.ln2"), f"{pre}.ffn")
            out = nx.add(h2, nx.dropout(f, self._drop, self.rng))
            if l == self.config.num_layers:
                out = self._norm(out, "base.enc.final_ln")
            h = self._compose(out, domain, task, l)
            hidden.append(h)
        return EncoderState(hidden, src_mask)

    def decode_logits(self, enc, tgt_prefix_ids):
        ids = self._ids(tgt_prefix_ids)
        if ids.shape[1] < 1:
            raise LengthError("decoder prefix must hold at least BOS")
        T = ids.shape[1]
        heads = self.config.num_heads
        self_mask = causal_mask(T)[None, None]
        cross_mask = enc.src_mask[:, None, None, :]
        mem = enc.memory
        g = self._embed(ids)
        for l in range(1, self.config.num_layers + 1):
            pre = f"base.dec.{l}"
            a = self._norm(g, f"{pre}.ln1")
            a = multi_head_attention(a, a, self_mask, self.named(f"{pre}.self"), heads)
            g = nx.add(g, nx.dropout(a, self._drop, self.rng))
            c = multi_head_attention(self._norm(g, f"{pre}.ln2"), mem, cross_mask,
                                     self.named(f"{pre}.cross"), heads)
            g = nx.add(g, nx.dropout(c, self._drop, self.rng))
            f = self._ffn(self._norm(g, f"{pre}.ln3"), f"{pre}.ffn")
            g = nx.add(g, nx.dropout(f, self._drop, self.rng))
        g = self._norm(g, "base.dec.final_ln")
        return nx.affine(g, self._base["base.out.w"], self._base["base.out.b"])

    def loss(self, src, tgt_in, tgt_out, domain=IN, task=MT):
        enc = self.encode(src, domain, task)
        return nx.cross_entropy(self.decode_logits(enc, tgt_in), tgt_out, ignore_index=PAD)

    # -- inference -------------------------------------------------------

    def translate_batch(self, sources, domain=IN, max_steps=None, task=MT):
        """Greedy decoding for a list of token-id sequences, batched."""
        if not sources:
            return []
        if max_steps is None:
            max_steps = self.config.max_len - 1
        max_steps = min(max_steps, self.config.max_len - 1)
        S = max(len(s) for s in sources)
        src = np.full((len(sources), S), PAD, dtype=np.int64)
        for i, s in enumerate(sources):
            src[i, : len(s)] = s
        was = self.training
        self.training = False
        try:
            with nx.no_grad():
                enc = self.encode(src, domain, task)
                prefix = np.full((len(sources), 1), BOS, dtype=np.int64)
                done = np.zeros(len(sources), dtype=bool)
                outs = [[] for _ in sources]
                for _ in range(max_steps):
                    logits = self.decode_logits(enc, prefix).data[:, -1, :]
                    nxt = np.argmax(logits, axis=-1)  # first max == lowest id
                    for i in np.flatnonzero(~done):
                        if nxt[i] == EOS:
                            done[i] = True
                        else:
                            outs[i].append(int(nxt[i]))
                    if done.all():
                        break
                    prefix = np.concatenate([prefix, np.where(done, PAD, nxt)[:, None]], axis=1)
        finally:
            self.training = was
        return [Translation(o, not fin) for o, fin in zip(outs, done)]

    def greedy_decode(self, src_ids, domain=IN, max_steps=None, task=MT):
        return self.translate_batch([list(src_ids)], domain, max_steps, task)[0]

    # -- persistence -----------------------------------------------------

    def header(self, **extra):
        meta = {
            "config": self.config.to_dict(),
            "use_dafe": self.dafe is not None,
            "domains": self.dafe.domains if self.dafe else [],
            "tasks": self.dafe.tasks if self.dafe else [],
            "trained": self.trained,
        }
        meta.update(extra)
        return meta

    def save(self, path, **extra):
        nx.save_parameters(path, self.parameters(), self.header(**extra))

    @classmethod
    def load(cls, path):
        meta, arrays = nx.load_parameters(path)
        model = cls(ModelConfig(**meta["config"]), use_dafe=meta["use_dafe"],
                    domains=meta["domains"], tasks=meta["tasks"])
        for p in model.parameters():
            group, arr = arrays[p.id]
            if group != p.group or arr.shape != p.shape:
                raise ValueError(f"checkpoint entry {p.id!r} does not match the model")
            p.data[...] = arr
        model.trained = meta.get("trained", False)
        model.meta = meta
        return model
