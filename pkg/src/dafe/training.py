"""Objectives, the round-robin DAFE schedule, the optimizer and pipelines."""

import logging
import time
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import numerics as nx
from .corruption import NoiseSpec
from .dafe import IN, LM, MT, OUT, ParameterPartition
from .data import MonolingualCorpus, ParallelCorpus, Sampler, back_translate, copy_corpus, make_batches
from .model import DafeTransformer, ModelConfig

log = logging.getLogger(__name__)

STRATEGIES = (
    "baseline", "copy", "back", "dafe_wo_embed", "dafe",
    "back_plus_dafe", "back_dafe", "back_dafe_plus_dafe",
)


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


def derive_seed(root, name):
    """Independent per-consumer seed, stable across runs and platforms."""
    return int(np.random.SeedSequence([root, zlib.crc32(name.encode())]).generate_state(1)[0])


@dataclass
class TrainConfig:
    rounds: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    mix: tuple = (1, 1, 1)
    seed: int = 0
    ckpt_every: int = 0
    patience: int = 200
    eval_every: int = 50
    clip_norm: float = 1.0


class Adam:
    """Adam with a global-norm clip over the parameters passed to ``step``.

    Only parameters handed to ``step`` are touched; moments are created
    lazily the first time a parameter is active.
    """

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip_norm=1.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.state = {}

    def step(self, params):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        if self.clip_norm:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        for p, g in zip(params, grads):
            st = self.state.get(p.id)
            if st is None:
                st = self.state[p.id] = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
            m, v, _ = st
            st[2] += 1
            t = st[2]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass(frozen=True)
class StepTemplate:
    source: str
    task: str
    domain: str

    @property
    def name(self):
        return f"{self.domain}-{self.task}"


ROUND_ROBIN = (
    StepTemplate("mono_in", LM, IN),
    StepTemplate("mono_out", LM, OUT),
    StepTemplate("parallel_out", MT, OUT),
)
SYNTHETIC_MT = StepTemplate("synthetic_in", MT, IN)


@dataclass
class TrainingSchedule:
    steps: tuple = ROUND_ROBIN
    max_rounds: int = 2000
    patience: int = 200
    eval_every: int = 50
    mix: Optional[tuple] = None

    def round_steps(self):
        mix = self.mix or (1,) * len(self.steps)
        if len(mix) != len(self.steps):
            raise ConfigError(f"mix {mix} does not match {len(self.steps)} step types")
        return [s for s, n in zip(self.steps, mix) for _ in range(int(n))]


@dataclass
class StepRecord:
    round: int
    step: str
    loss: float
    wall: float = field(default=0.0, compare=False)


class MetricsLog:
    """Line-delimited training records.

    The main file holds ``round<TAB>step<TAB>loss`` and is reproducible
    bit-for-bit; wall-clock times go to a ``.time`` sidecar.
    """

    def __init__(self):
        self.records = []

    def add(self, rnd, step, loss, wall=0.0):
        self.records.append(StepRecord(rnd, step, loss, wall))

    def extend(self, other, prefix=""):
        for r in other.records:
            self.records.append(replace(r, step=prefix + r.step))

    def lines(self):
        return [f"{r.round}\t{r.step}\t{r.loss!r}" for r in self.records]

    def losses(self, step):
        return [r.loss for r in self.records if r.step == step]

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("round\tstep\tloss\n")
            for line in self.lines():
                fh.write(line + "\n")
        with open(str(path) + ".time", "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(f"{r.round}\t{r.step}\t{r.wall:.6f}\n")


class Trainer:
    """Runs single optimisation steps, updating only the active partition.

    ``embeddings=False`` keeps every domain/task vector out of the update
    set, which freezes them at their (zero) initial values.
    """

    def __init__(self, model, optimizer, embeddings=True, log=None):
        self.model = model
        self.optimizer = optimizer
        self.embeddings = embeddings
        self.partition = ParameterPartition(model.parameters())
        self.log = log if log is not None else MetricsLog()
        self.history = []

    def step(self, batch, domain, task):
        model = self.model
        model.training = True
        try:
            loss = model.loss(batch.src, batch.tgt_in, batch.tgt_out, domain, task)
            loss.backward()
        finally:
            model.training = False
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss on {domain}-{task} step")
        self.optimizer.step(self.partition.active(domain, task, self.embeddings))
        for p in model.parameters():
            p.zero_grad()
        self.history.append((domain, task))
        return value

    def mt_step(self, batch, domain=None):
        return self.step(batch, domain or batch.domain, MT)

    def lm_step(self, batch, domain):
        return self.step(batch, domain, LM)


def check_samplers(schedule, samplers):
    missing = sorted({s.source for s in schedule.steps} - set(samplers))
    if missing:
        raise ConfigError(f"schedule needs corpora that were not supplied: {', '.join(missing)}")


def train_round(schedule, samplers, trainer, rnd=0):
    """One pass over the schedule's step templates; returns {step name: loss}."""
    check_samplers(schedule, samplers)
    losses = {}
    for tpl in schedule.round_steps():
        batch = next(samplers[tpl.source])
        t0 = time.perf_counter()
        loss = trainer.step(batch, tpl.domain, tpl.task)
        trainer.log.add(rnd, tpl.name, loss, time.perf_counter() - t0)
        losses[tpl.name] = loss
    return losses


def dev_loss(model, corpus, domain=IN, batch_size=64):
    total, count = 0.0, 0
    with nx.no_grad():
        for batch in make_batches(corpus, batch_size, seed=0, max_len=model.config.max_len):
            n = int(batch.tgt_mask.sum())
            loss = model.loss(batch.src, batch.tgt_in, batch.tgt_out, domain, MT)
            total += float(loss.data) * n
            count += n
    return total / count


def train(schedule, samplers, trainer, dev=None, dev_domain=IN, on_round=None):
    """Repeat rounds until the budget runs out or dev loss plateaus.

    With a dev corpus, the parameters with the best dev loss are restored.
    """
    check_samplers(schedule, samplers)
    model = trainer.model
    best, best_round, snapshot = np.inf, -1, None
    rounds_run = 0
    for rnd in range(schedule.max_rounds):
        train_round(schedule, samplers, trainer, rnd)
        rounds_run = rnd + 1
        if on_round is not None:
            on_round(rnd)
        if dev is not None and (rnd + 1) % schedule.eval_every == 0:
            value = dev_loss(model, dev, dev_domain)
            if value < best:
                best, best_round = value, rnd
                snapshot = [p.data.copy() for p in model.parameters()]
            elif schedule.patience and rnd - best_round >= schedule.patience:
                log.info("dev loss plateaued at round %d (best %d)", rnd, best_round)
                break
    if snapshot is not None:
        for p, arr in zip(model.parameters(), snapshot):
            p.data[...] = arr
    model.trained = True
    return {"rounds": rounds_run, "best_dev_loss": None if snapshot is None else best,
            "best_round": best_round}


# --- pipelines --------------------------------------------------------------

@dataclass
class Corpora:
    parallel_out: ParallelCorpus
    mono_in: MonolingualCorpus
    mono_out: Optional[MonolingualCorpus] = None
    dev: Optional[ParallelCorpus] = None

    def __post_init__(self):
        if self.mono_out is None and self.parallel_out is not None:
            self.mono_out = self.parallel_out.target_side()


@dataclass
class PipelineConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    reverse_rounds: Optional[int] = None
    use_dev: bool = True


@dataclass
class PipelineResult:
    strategy: str
    model: DafeTransformer
    log: MetricsLog
    metrics: dict
    reverse_model: Optional[DafeTransformer] = None
    synthetic: Optional[ParallelCorpus] = None
    domain: str = IN


class _Run:
    """Shared plumbing: seeds, samplers, trainers for one pipeline run."""

    def __init__(self, cfg: PipelineConfig, on_checkpoint=None):
        self.cfg = cfg
        self.root = cfg.train.seed
        self.log = MetricsLog()
        self.metrics = {}
        self.on_checkpoint = on_checkpoint

    def seed(self, name):
        return derive_seed(self.root, name)

    def new_model(self, tag, use_dafe):
        return DafeTransformer(self.cfg.model, seed=self.seed(f"init.{tag}"), use_dafe=use_dafe)

    def sampler(self, tag, corpus, lm=False, domain=None):
        t = self.cfg.train
        noise = None
        if lm:
            noise = replace(self.cfg.noise, seed=self.seed(f"noise.{tag}"))
        return Sampler(corpus, t.batch_size, self.seed(f"batch.{tag}"),
                       self.cfg.model.max_len, noise=noise, domain=domain)

    def fit(self, tag, model, steps, samplers, embeddings=True, rounds=None, dev=None):
        t = self.cfg.train
        opt = Adam(t.lr, (t.beta1, t.beta2), clip_norm=t.clip_norm)
        run_log = MetricsLog()
        trainer = Trainer(model, opt, embeddings=embeddings, log=run_log)
        schedule = TrainingSchedule(steps, rounds or t.rounds, t.patience, t.eval_every,
                                    t.mix if len(t.mix) == len(steps) else None)
        on_round = None
        if self.on_checkpoint is not None and t.ckpt_every:
            def on_round(rnd):
                if (rnd + 1) % t.ckpt_every == 0:
                    self.on_checkpoint(tag, model, rnd + 1)
        info = train(schedule, samplers, trainer, dev=dev if self.cfg.use_dev else None,
                     on_round=on_round)
        self.log.extend(run_log, prefix=f"{tag}:" if tag != "forward" else "")
        self.metrics[tag] = info
        return model

    # plain translation model on one corpus
    def fit_mt(self, tag, corpus, dev=None, rounds=None):
        model = self.new_model(tag, use_dafe=False)
        steps = (StepTemplate("parallel_out", MT, OUT),)
        samplers = {"parallel_out": self.sampler(f"{tag}.parallel", corpus, domain=OUT)}
        return self.fit(tag, model, steps, samplers, rounds=rounds, dev=dev)

    # the round-robin LM/MT schedule, optionally with in-domain synthetic MT steps
    def fit_dafe(self, tag, parallel, mono_in, mono_out, synthetic=None, embeddings=True,
                 use_dafe=True, dev=None, rounds=None):
        model = self.new_model(tag, use_dafe=use_dafe)
        samplers = {
            "mono_in": self.sampler(f"{tag}.mono_in", mono_in, lm=True, domain=IN),
            "mono_out": self.sampler(f"{tag}.mono_out", mono_out, lm=True, domain=OUT),
            "parallel_out": self.sampler(f"{tag}.parallel", parallel, domain=OUT),
        }
        steps = ROUND_ROBIN
        if synthetic is not None:
            samplers["synthetic_in"] = self.sampler(f"{tag}.synthetic", synthetic, domain=IN)
            steps = ROUND_ROBIN + (SYNTHETIC_MT,)
        return self.fit(tag, model, steps, samplers, embeddings=embeddings, rounds=rounds, dev=dev)

    def reverse_dev(self, dev):
        return dev.swapped() if dev is not None else None


def train_multitask(corpora: Corpora, config: PipelineConfig = None, use_dafe=True, embeddings=True):
    """The round-robin LM/MT schedule on its own.

    ``use_dafe=False`` builds a model with no embedding table at all; with the
    same config it draws exactly the same initial weights and batches as the
    table-carrying model.
    """
    cfg = config or PipelineConfig()
    run = _Run(cfg)
    model = run.fit_dafe("forward", corpora.parallel_out, corpora.mono_in, corpora.mono_out,
                         embeddings=embeddings, use_dafe=use_dafe, dev=corpora.dev)
    return PipelineResult("multitask", model, run.log, run.metrics)


def run_pipeline(strategy, corpora: Corpora, config: PipelineConfig = None, on_checkpoint=None):
    """Train the model(s) a strategy calls for and return them with their logs."""
    if strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    cfg = config or PipelineConfig()
    if corpora.parallel_out is None or len(corpora.parallel_out) == 0:
        raise ConfigError("out-of-domain parallel corpus is required")
    needs_mono = strategy != "baseline"
    if needs_mono and (corpora.mono_in is None or len(corpora.mono_in) == 0):
        raise ConfigError(f"strategy {strategy!r} needs in-domain monolingual data")

    run = _Run(cfg, on_checkpoint)
    par, dev = corpora.parallel_out, corpora.dev
    rev_rounds = cfg.reverse_rounds
    reverse = synthetic = None

    if strategy in ("back", "back_plus_dafe"):
        reverse = run.fit_mt("reverse", par.swapped(), dev=run.reverse_dev(dev), rounds=rev_rounds)
        synthetic = back_translate(corpora.mono_in, reverse, domain=IN, checkpoint_id="reverse")
    elif strategy in ("back_dafe", "back_dafe_plus_dafe"):
        reverse = run.fit_dafe("reverse", par.swapped(), corpora.mono_in, corpora.mono_out,
                               dev=run.reverse_dev(dev), rounds=rev_rounds)
        synthetic = back_translate(corpora.mono_in, reverse, domain=IN, checkpoint_id="reverse")

    if strategy == "baseline":
        model = run.fit_mt("forward", par, dev=dev)
    elif strategy == "copy":
        train_set = par.concat(copy_corpus(corpora.mono_in))
        run.metrics["train_size"] = len(train_set)
        model = run.fit_mt("forward", train_set, dev=dev)
    elif strategy in ("back", "back_dafe"):
        train_set = par.concat(synthetic)
        run.metrics["train_size"] = len(train_set)
        model = run.fit_mt("forward", train_set, dev=dev)
    elif strategy == "dafe_wo_embed":
        model = run.fit_dafe("forward", par, corpora.mono_in, corpora.mono_out,
                             embeddings=False, dev=dev)
    elif strategy == "dafe":
        model = run.fit_dafe("forward", par, corpora.mono_in, corpora.mono_out, dev=dev)
    else:  # back_plus_dafe, back_dafe_plus_dafe
        model = run.fit_dafe("forward", par, corpora.mono_in, corpora.mono_out,
                             synthetic=synthetic, dev=dev)

    return PipelineResult(strategy, model, run.log, run.metrics, reverse, synthetic)
