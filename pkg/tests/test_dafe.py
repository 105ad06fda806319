import numpy as np
import pytest

from conftest import randomize_dafe, tiny_config
from dafe import numerics as nx
from dafe.dafe import (IN, LM, MT, OUT, FeatureEmbeddingTable, ParameterPartition, UnknownIdError,
                       active_parameters, compose, format_probe, probe_swap)
from dafe.model import BOS, DafeTransformer
from dafe.numerics import Tensor


def _table(L=1, d=3):
    return FeatureEmbeddingTable(L, d)


def test_compose_adds_both_vectors():
    t = _table()
    t.domain_vector(IN, 0).data[...] = [1, 1, 1]
    t.task_vector(MT, 0).data[...] = [0, 0, 2]
    out = compose(Tensor(np.zeros((1, 2, 3))), t, IN, MT, 0)
    assert out.data.tolist() == [[[1, 1, 3], [1, 1, 3]]]


def test_compose_with_zero_vectors_is_identity():
    x = np.random.default_rng(0).normal(size=(2, 4, 3))
    assert compose(Tensor(x), _table(), OUT, LM, 1).data.tobytes() == x.tobytes()


def test_compose_broadcasts_over_positions():
    t = _table()
    t.domain_vector(OUT, 1).data[...] = [1, 2, 3]
    out = compose(Tensor(np.zeros((1, 4, 3))), t, OUT, LM, 1).data
    assert (out == out[:, :1, :]).all()


def test_compose_is_exactly_translational():
    rng = np.random.default_rng(1)
    t = _table()
    for p in t.parameters():
        p.data[...] = rng.integers(-8, 8, 3) / 4  # dyadic so the sums are exact
    x = rng.integers(-64, 64, (2, 3, 3)) / 8
    a = compose(Tensor(x), t, IN, LM, 1).data
    b = compose(Tensor(np.zeros_like(x)), t, IN, LM, 1).data
    assert np.array_equal(a - b, x)


def test_compose_gradients():
    rng = np.random.default_rng(2)
    t = _table()
    for p in t.parameters():
        p.data[...] = rng.normal(size=3)
    x = nx.Parameter("x", rng.normal(size=(2, 3, 3)), "base")
    w = Tensor(rng.normal(size=(2, 3, 3)))
    f = lambda: nx.sum_all(nx.mul(compose(x, t, IN, MT, 0), w))
    ps = [x, t.domain_vector(IN, 0), t.task_vector(MT, 0)]
    assert nx.grad_check(f, ps) < 1e-6


def test_unknown_ids():
    t = _table()
    with pytest.raises(UnknownIdError):
        t.domain_vector("legal", 0)
    with pytest.raises(UnknownIdError):
        t.task_vector(MT, 5)


def test_register_domain_adds_one_vector_per_layer():
    model = DafeTransformer(tiny_config(), seed=0)
    randomize_dafe(model)
    before = {p.id: p.data.copy() for p in model.parameters()}
    n_before = sum(p.data.size for p in model.parameters())
    model.dafe.register_domain("legal")
    params = model.parameters()
    cfg = model.config
    assert sum(p.data.size for p in params) - n_before == (cfg.num_layers + 1) * cfg.hidden_size
    for p in params:
        if p.id in before:
            assert p.data.tobytes() == before[p.id].tobytes()
    with pytest.raises(ValueError):
        model.dafe.register_domain("legal")


@pytest.mark.parametrize("domain,task", [(IN, LM), (OUT, LM), (OUT, MT), (IN, MT)])
def test_active_parameters_match_partition(domain, task):
    model = DafeTransformer(tiny_config(), seed=0)
    groups = {p.group for p in active_parameters(model, domain, task)}
    assert groups == {"base", f"domain_{domain}", f"task_{task}"}
    inactive = ParameterPartition(model.parameters()).inactive(domain, task)
    other_d = OUT if domain == IN else IN
    other_t = MT if task == LM else LM
    assert {p.group for p in inactive} == {f"domain_{other_d}", f"task_{other_t}"}


def test_partition_rejects_duplicate_ids():
    p = nx.Parameter("a", np.zeros(2), "base")
    with pytest.raises(ValueError):
        ParameterPartition([p, p])


def test_model_without_table_has_same_logits_as_zero_table():
    cfg = tiny_config()
    with_table = DafeTransformer(cfg, seed=3)
    without = DafeTransformer(cfg, seed=3, use_dafe=False)
    src, tgt = [[5, 6, 7, 8]], [[BOS, 9, 10]]
    a = with_table.decode_logits(with_table.encode(src, IN, LM), tgt).data
    b = without.decode_logits(without.encode(src, IN, LM), tgt).data
    assert a.tobytes() == b.tobytes()


def test_probe_untrained_gives_same_output_everywhere(tiny_model):
    out = probe_swap(tiny_model, [5, 6, 7], [IN, OUT])
    assert out[IN] == out[OUT]


def test_probe_single_domain_equals_greedy(tiny_model):
    randomize_dafe(tiny_model)
    assert probe_swap(tiny_model, [5, 6], [OUT]) == {OUT: tiny_model.greedy_decode([5, 6], OUT).tokens}


def test_probe_unknown_domain(tiny_model):
    with pytest.raises(UnknownIdError):
        probe_swap(tiny_model, [5], [IN, "legal"])


def test_format_probe_lines():
    lines = format_probe({IN: [7, 8], OUT: []}, lambda t: " ".join(map(str, t)))
    assert lines == ["in\t7 8", "out\t"]
