import math

import numpy as np
import pytest

from conftest import randomize_dafe, tiny_config
from dafe import numerics as nx
from dafe.model import (BOS, EOS, PAD, DafeTransformer, LengthError, ModelConfig,
                        multi_head_attention, positional_encoding)
from dafe.numerics import Parameter, Tensor


# --- positional encoding ----------------------------------------------------

def test_position_zero():
    assert positional_encoding(1, 6)[0].tolist() == [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]


@pytest.mark.parametrize("d", [2, 4, 8, 64])
def test_position_one_first_entry(d):
    assert abs(positional_encoding(2, d)[1, 0] - 0.841471) < 1e-6


def test_positional_range_and_length_error():
    pe = positional_encoding(32, 16)
    assert pe.min() >= -1.0 and pe.max() <= 1.0
    with pytest.raises(LengthError):
        positional_encoding(33, 16, max_len=32)


def test_positional_matches_formula():
    d = 6
    pe = positional_encoding(5, d)
    for p in range(5):
        for i in range(d // 2):
            assert pe[p, 2 * i] == pytest.approx(math.sin(p / 10000 ** (2 * i / d)), abs=1e-15)
            assert pe[p, 2 * i + 1] == pytest.approx(math.cos(p / 10000 ** (2 * i / d)), abs=1e-15)


# --- attention --------------------------------------------------------------

def _attn_params(d, wq=None):
    p = {}
    for n in "qkvo":
        w = np.eye(d) if not (n == "q" and wq is not None) else wq
        p[f"w{n}"] = Parameter(f"w{n}", w, "base")
        p[f"b{n}"] = Parameter(f"b{n}", np.zeros(d), "base")
    return p


def test_single_key_returns_its_value():
    rng = np.random.default_rng(0)
    q = Tensor(rng.normal(size=(1, 3, 4)))
    kv = Tensor(rng.normal(size=(1, 1, 4)))
    out = multi_head_attention(q, kv, np.ones((1, 1, 3, 1), bool), _attn_params(4), 2)
    assert np.allclose(out.data, np.repeat(kv.data, 3, axis=1), atol=1e-15)


def test_equal_scores_average_values():
    rng = np.random.default_rng(1)
    kv = Tensor(rng.normal(size=(1, 5, 4)))
    q = Tensor(rng.normal(size=(1, 2, 4)))
    out = multi_head_attention(q, kv, np.ones((1, 1, 2, 5), bool), _attn_params(4, np.zeros((4, 4))), 2)
    assert np.allclose(out.data[0], kv.data[0].mean(axis=0), atol=1e-14)


def test_causal_mask_ignores_future_rows():
    rng = np.random.default_rng(2)
    params = {k: Parameter(k, rng.normal(size=v.shape), "base") for k, v in _attn_params(4).items()}
    x = rng.normal(size=(1, 6, 4))
    mask = np.tril(np.ones((6, 6), bool))[None, None]
    base = multi_head_attention(Tensor(x), Tensor(x), mask, params, 2).data
    for t in range(6):
        y = x.copy()
        y[0, t + 1:] = rng.normal(size=y[0, t + 1:].shape)
        out = multi_head_attention(Tensor(y), Tensor(y), mask, params, 2).data
        assert out[0, : t + 1].tobytes() == base[0, : t + 1].tobytes()


def test_masked_keys_do_not_matter():
    rng = np.random.default_rng(3)
    params = {k: Parameter(k, rng.normal(size=v.shape), "base") for k, v in _attn_params(4).items()}
    q = Tensor(rng.normal(size=(1, 3, 4)))
    kv = rng.normal(size=(1, 5, 4))
    mask = np.array([True, True, True, False, False])[None, None, None, :]
    a = multi_head_attention(q, Tensor(kv), mask, params, 2).data
    kv[0, 3:] = 100 * rng.normal(size=(2, 4))
    b = multi_head_attention(q, Tensor(kv), mask, params, 2).data
    assert a.tobytes() == b.tobytes()


def test_fully_masked_query_rejected():
    q = Tensor(np.zeros((1, 2, 4)))
    with pytest.raises(nx.InvalidMaskError):
        multi_head_attention(q, q, np.zeros((1, 1, 2, 2), bool), _attn_params(4), 2)


# --- config -------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(hidden_size=10, num_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(dropout_rate=1.0)
    big = ModelConfig.full_size()
    assert (big.num_layers, big.hidden_size) == (4, 512)


# --- encoder ----------------------------------------------------------------

PAIRS = [("in", "mt"), ("in", "lm"), ("out", "mt"), ("out", "lm")]


def test_zero_embeddings_make_domain_and_task_irrelevant(tiny_model):
    src = [[5, 6, 7, 8, 9]]
    tgt = [[BOS, 10, 11, 12]]
    outs = {pair: tiny_model.decode_logits(tiny_model.encode(src, *pair), tgt).data.tobytes()
            for pair in PAIRS}
    assert len(set(outs.values())) == 1


def test_nonzero_embeddings_change_the_encoding(tiny_model):
    randomize_dafe(tiny_model)
    a = tiny_model.encode([[5, 6, 7]], "in", "mt").memory.data
    b = tiny_model.encode([[5, 6, 7]], "out", "mt").memory.data
    assert not np.allclose(a, b)


def _ln(v, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return [(x - mu) / math.sqrt(var + eps) for x in v]


def test_single_token_hand_computation():
    cfg = ModelConfig(num_layers=1, hidden_size=2, num_heads=1, ff_size=2, vocab_size=5, max_len=4)
    m = DafeTransformer(cfg, seed=0)
    for p in m.base_parameters():
        name = p.id
        if name.endswith(("wq", "wk", "wv", "wo", "w1", "w2")):
            p.data[...] = np.eye(2)
        elif not name.endswith("gain") and name != "base.embed" and name != "base.out.w":
            p.data[...] = 0.0
    m.param("base.embed").data[4] = [0.3, -0.2]
    dom = {0: [0.1, 0.4], 1: [-0.5, 0.25]}
    task = {0: [0.05, -0.05], 1: [0.2, 0.0]}
    for layer in (0, 1):
        m.dafe.domain_vector("in", layer).data[...] = dom[layer]
        m.dafe.task_vector("mt", layer).data[...] = task[layer]

    # layer 0: sqrt(2) * embedding + [sin 0, cos 0] + vectors
    h0 = [math.sqrt(2) * 0.3 + 0.0 + 0.1 + 0.05, math.sqrt(2) * -0.2 + 1.0 + 0.4 - 0.05]
    # one key: attention returns the (identity-projected) normalised input
    h1 = [a + b for a, b in zip(h0, _ln(h0))]
    ffn = [max(0.0, x) for x in _ln(h1)]
    pre = _ln([a + b for a, b in zip(h1, ffn)])
    expected = [pre[0] - 0.5 + 0.2, pre[1] + 0.25 + 0.0]

    state = m.encode([4], "in", "mt")
    assert np.allclose(state.hidden[0].data[0, 0], h0, atol=1e-12)
    assert np.allclose(state.memory.data[0, 0], expected, atol=1e-12)


def test_padding_does_not_change_real_positions(tiny_model):
    randomize_dafe(tiny_model)
    short = tiny_model.decode_logits(tiny_model.encode([[5, 6, 7]], "in", "mt"), [[BOS, 9, 10]]).data
    padded = tiny_model.decode_logits(tiny_model.encode([[5, 6, 7, PAD, PAD]], "in", "mt"),
                                      [[BOS, 9, 10]]).data
    assert np.allclose(short, padded, atol=1e-12)


def test_unknown_domain_rejected(tiny_model):
    from dafe.dafe import UnknownIdError

    with pytest.raises(UnknownIdError):
        tiny_model.encode([[5]], "legal", "mt")
    with pytest.raises(UnknownIdError):
        tiny_model.encode([[5]], "in", "qa")


def test_token_id_out_of_range(tiny_model):
    with pytest.raises(IndexError):
        tiny_model.encode([[25]])


# --- decoder ----------------------------------------------------------------

def test_decoder_causality(tiny_model):
    randomize_dafe(tiny_model)
    enc = tiny_model.encode([[5, 6, 7, 8]], "in", "mt")
    prefix = np.array([[BOS, 9, 10, 11, 12, 13]])
    base = tiny_model.decode_logits(enc, prefix).data
    rng = np.random.default_rng(0)
    for i in range(prefix.shape[1] - 1):
        mutated = prefix.copy()
        mutated[0, i + 1:] = rng.integers(4, 20, prefix.shape[1] - i - 1)
        out = tiny_model.decode_logits(enc, mutated).data
        assert out[0, : i + 1].tobytes() == base[0, : i + 1].tobytes()


def test_zero_output_projection_is_uniform(tiny_model):
    tiny_model.zero_output_projection()
    enc = tiny_model.encode([[5, 6, 7]])
    logits = tiny_model.decode_logits(enc, [[BOS, 8, 9]])
    assert np.all(logits.data == 0.0)
    loss = nx.cross_entropy(logits, [8, 9, EOS], ignore_index=PAD)
    assert float(loss.data) == pytest.approx(math.log(20), abs=1e-12)


def test_decode_is_deterministic(tiny_model):
    enc = tiny_model.encode([[5, 6, 7]])
    a = tiny_model.decode_logits(enc, [[BOS, 8]]).data
    b = tiny_model.decode_logits(enc, [[BOS, 8]]).data
    assert a.tobytes() == b.tobytes()


def test_prefix_too_long(tiny_model):
    enc = tiny_model.encode([[5]])
    with pytest.raises(LengthError):
        tiny_model.decode_logits(enc, [[BOS] * 13])


# --- greedy decoding ----------------------------------------------------------

def test_forced_eos_gives_empty_output(tiny_model):
    tiny_model.zero_output_projection()
    tiny_model.param("base.out.b").data[EOS] = 10.0
    result = tiny_model.greedy_decode([5, 6, 7])
    assert result.tokens == [] and not result.truncated


def test_ties_break_to_lowest_id(tiny_model):
    tiny_model.zero_output_projection()
    tiny_model.param("base.out.b").data[[7, 9]] = 3.0
    result = tiny_model.greedy_decode([5], max_steps=3)
    assert result.tokens == [7, 7, 7] and result.truncated


def test_greedy_is_deterministic(tiny_model):
    randomize_dafe(tiny_model)
    assert tiny_model.greedy_decode([5, 6, 7]) == tiny_model.greedy_decode([5, 6, 7])


def test_batched_decode_matches_single(tiny_model):
    randomize_dafe(tiny_model)
    sources = [[5, 6, 7], [8, 9], [10, 11, 12, 13]]
    batched = tiny_model.translate_batch(sources, "out")
    assert batched == [tiny_model.greedy_decode(s, "out") for s in sources]


def test_trained_copy_model_copies(copy_model):
    corpus, model = copy_model
    outs = model.translate_batch([list(s) for s in corpus.sources])
    assert all(o.tokens == list(s) for o, s in zip(outs, corpus.sources))


# --- structure ----------------------------------------------------------------

def test_base_size_independent_of_registered_domains():
    cfg = tiny_config()
    two = DafeTransformer(cfg, seed=0)
    three = DafeTransformer(cfg, seed=0, domains=("in", "out", "legal"))
    plain = DafeTransformer(cfg, seed=0, use_dafe=False)
    sizes = {sum(p.data.size for p in m.base_parameters()) for m in (two, three, plain)}
    assert len(sizes) == 1


def test_full_model_gradient_check():
    model = DafeTransformer(tiny_config(), seed=1)
    randomize_dafe(model, seed=1)
    rng = np.random.default_rng(1)
    src = rng.integers(4, 20, (2, 5))
    tin = np.concatenate([np.full((2, 1), BOS), rng.integers(4, 20, (2, 4))], axis=1)
    tout = np.concatenate([tin[:, 1:], np.full((2, 1), EOS)], axis=1)
    f = lambda: model.loss(src, tin, tout, "in", "lm")
    assert nx.grad_check(f, model.parameters(), max_coords=6, seed=1) < 1e-3


def test_checkpoint_round_trip(tmp_path, tiny_model):
    randomize_dafe(tiny_model)
    tiny_model.trained = True
    path = tmp_path / "m.ckpt"
    tiny_model.save(path, direction="forward")
    loaded = DafeTransformer.load(path)
    assert loaded.meta["direction"] == "forward" and loaded.trained
    assert loaded.dafe.domains == ["in", "out"]
    for a, b in zip(tiny_model.parameters(), loaded.parameters()):
        assert a.id == b.id and a.group == b.group and a.data.tobytes() == b.data.tobytes()
