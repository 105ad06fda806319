import numpy as np
import pytest

from dafe.model import DafeTransformer, ModelConfig


def tiny_config(**kw):
    base = dict(num_layers=2, hidden_size=8, num_heads=2, ff_size=16, vocab_size=20, max_len=12)
    base.update(kw)
    return ModelConfig(**base)


def randomize_dafe(model, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    for p in model.dafe.parameters():
        p.data[...] = rng.uniform(-scale, scale, p.shape)


@pytest.fixture
def tiny_model():
    return DafeTransformer(tiny_config(), seed=0)


def fit(corpus, vocab_size=20, epochs=60, hidden=32, lr=3e-3, batch_size=20, seed=0):
    """Plain MT training to (near) convergence on a small synthetic corpus."""
    from dafe.data import make_batches
    from dafe.training import Adam, Trainer

    cfg = ModelConfig(num_layers=2, hidden_size=hidden, num_heads=4, ff_size=2 * hidden,
                      vocab_size=vocab_size, max_len=12)
    model = DafeTransformer(cfg, seed=seed, use_dafe=False)
    trainer = Trainer(model, Adam(lr=lr))
    for epoch in range(epochs):
        for batch in make_batches(corpus, batch_size, seed=epoch, max_len=12):
            trainer.mt_step(batch)
    model.trained = True
    return model


@pytest.fixture(scope="session")
def copy_model():
    from dafe.toy import copy_task

    corpus = copy_task(seed=0, n=200, vocab_size=20)
    return corpus, fit(corpus)


ACCEPTANCE = []


def report(criterion, ok, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
