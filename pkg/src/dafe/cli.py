"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 configuration or data error,
4 numerical failure during a run.
"""

import argparse
import ast
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import numerics as nx
from .corruption import NoiseSpec
from .dafe import IN, UnknownIdError, format_probe, probe_swap
from .data import (MonolingualCorpus, UntrainedModelError, Vocabulary, back_translate, build_vocab,
                   load_mono, load_parallel, read_lines, write_lines)
from .evaluation import bleu, low_resource_sweep, translate_corpus
from .model import DafeTransformer, ModelConfig
from .training import (STRATEGIES, ConfigError, Corpora, PipelineConfig, TrainConfig, UsageError,
                       run_pipeline)

log = logging.getLogger("dafe")

EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 2, 3, 4

DATA_KEYS = ("vocab", "parallel_out", "mono_in", "mono_out", "dev")
EVAL_KEYS = ("test", "domain")
TRAIN_EXTRA = ("reverse_rounds", "use_dev")


class UsageFailure(Exception):
    pass


# --- configuration ----------------------------------------------------------

def _value(text):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_assignments(lines, origin="config"):
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected key = value, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"{origin}:{n}: key {key!r} has no section prefix")
        out[key] = _value(val)
    return out


class RunConfig:
    """Sectioned key/value settings; paths are resolved against the config file."""

    def __init__(self, values, base=Path(".")):
        self.values = dict(values)
        self.base = Path(base)
        self._check_keys()

    @classmethod
    def load(cls, path, overrides=()):
        values = {}
        base = Path(".")
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file {path} not found")
            values = parse_assignments(read_lines(path), str(path))
            base = path.parent
        values.update(parse_assignments(overrides, "--set"))
        return cls(values, base)

    def _check_keys(self):
        allowed = {f"model.{f.name}" for f in fields(ModelConfig)}
        allowed |= {"noise.p_drop", "noise.k"}
        allowed |= {f"train.{f.name}" for f in fields(TrainConfig)} | {f"train.{k}" for k in TRAIN_EXTRA}
        allowed |= {f"data.{k}" for k in DATA_KEYS} | {f"eval.{k}" for k in EVAL_KEYS}
        unknown = sorted(set(self.values) - allowed)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

    def section(self, name):
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def path(self, key, required=False):
        val = self.values.get(key)
        if val is None:
            if required:
                raise ConfigError(f"missing required setting {key}")
            return None
        return self.base / str(val)

    def pipeline(self, vocab_size):
        if "train.seed" not in self.values:
            raise ConfigError("train.seed is mandatory (there is no clock-based default)")
        train = self.section("train")
        extra = {k: train.pop(k) for k in TRAIN_EXTRA if k in train}
        if "mix" in train:
            mix = train["mix"]
            train["mix"] = tuple(int(x) for x in (mix.split(",") if isinstance(mix, str) else mix))
        model = dict(self.section("model"), vocab_size=vocab_size)
        try:
            return PipelineConfig(model=ModelConfig(**model), noise=NoiseSpec(**self.section("noise")),
                                  train=TrainConfig(**train), **extra)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e


def _exists(prefix, suffixes):
    for s in suffixes:
        p = Path(f"{prefix}{s}")
        if not p.exists():
            raise ConfigError(f"file {p} not found")


def load_corpora(rc: RunConfig, need_dev=False):
    """Vocabulary plus every corpus the config names; paths checked up front."""
    par = rc.path("data.parallel_out", required=True)
    mono_in = rc.path("data.mono_in")
    mono_out = rc.path("data.mono_out")
    dev = rc.path("data.dev", required=need_dev)
    _exists(par, (".src", ".tgt"))
    for p in (mono_in, mono_out):
        if p is not None:
            _exists(p, ("",))
    if dev is not None:
        _exists(dev, (".src", ".tgt"))

    vocab_path = rc.path("data.vocab")
    if vocab_path is not None:
        _exists(vocab_path, ("",))
        vocab = Vocabulary(read_lines(vocab_path))
    else:
        streams = [read_lines(f"{par}.src"), read_lines(f"{par}.tgt")]
        streams += [read_lines(p) for p in (mono_in, mono_out) if p is not None]
        vocab = build_vocab(streams, rc.values.get("model.vocab_size", ModelConfig.vocab_size))

    corpora = Corpora(
        load_parallel(par, vocab, "out"),
        load_mono(mono_in, vocab, IN) if mono_in is not None else MonolingualCorpus([]),
        load_mono(mono_out, vocab, "out") if mono_out is not None else None,
        load_parallel(dev, vocab, IN) if dev is not None else None,
    )
    return vocab, corpora


# --- checkpoints ------------------------------------------------------------

def checkpoint_id(model):
    h = hashlib.sha256()
    for p in model.parameters():
        h.update(p.id.encode())
        h.update(p.data.tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(path, model, vocab, direction, **extra):
    cid = checkpoint_id(model)
    model.save(path, vocab=vocab.to_list(), direction=direction, checkpoint_id=cid, **extra)
    return cid


def load_checkpoint(path):
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} not found")
    try:
        model = DafeTransformer.load(path)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"unreadable checkpoint {path}: {e}") from e
    return model, Vocabulary(model.meta["vocab"])


def _domains(model, names):
    known = model.dafe.domains if model.dafe is not None else [IN, "out"]
    for d in names:
        if d not in known:
            raise UsageFailure(f"unknown domain {d!r}; this checkpoint knows {', '.join(known)}")
    return names


# --- commands ---------------------------------------------------------------

def cmd_train(args):
    if args.strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {args.strategy!r}; choose from {', '.join(STRATEGIES)}")
    rc = RunConfig.load(args.config, _overrides(args))
    vocab, corpora = load_corpora(rc)
    cfg = rc.pipeline(len(vocab))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def on_checkpoint(tag, model, rnd):
        (out / "checkpoints").mkdir(exist_ok=True)
        direction = "reverse" if tag == "reverse" else "forward"
        save_checkpoint(out / "checkpoints" / f"{tag}-{rnd:06d}.ckpt", model, vocab, direction,
                        strategy=args.strategy, round=rnd)

    result = run_pipeline(args.strategy, corpora, cfg, on_checkpoint)
    cid = save_checkpoint(out / "model.ckpt", result.model, vocab, "forward", strategy=args.strategy)
    if result.reverse_model is not None:
        rid = save_checkpoint(out / "reverse.ckpt", result.reverse_model, vocab, "reverse",
                              strategy=args.strategy)
        syn = result.synthetic
        write_lines(out / "synthetic.src", [vocab.decode(s) for s in syn.sources])
        write_lines(out / "synthetic.tgt", [vocab.decode(t) for t in syn.targets])
        meta = {"provenance": syn.provenance, "domain": syn.domain, "size": len(syn), "generator": rid}
        write_lines(out / "synthetic.meta", [json.dumps(meta, sort_keys=True)])
    result.log.write(out / "metrics.tsv")
    print(f"{args.strategy}: wrote {out / 'model.ckpt'} (id {cid})")
    return 0


def cmd_translate(args):
    model, vocab = load_checkpoint(args.checkpoint)
    domain = _domains(model, [args.domain])[0]
    lines = read_lines(args.input)
    hyps = translate_corpus(model, [vocab.encode(s) or [vocab.stoi["<unk>"]] for s in lines], domain)
    write_lines(args.output, [vocab.decode(h) for h in hyps])
    return 0


def cmd_backtranslate(args):
    model, vocab = load_checkpoint(args.checkpoint)
    direction = model.meta.get("direction")
    if direction != "reverse":
        raise ConfigError(f"checkpoint direction is {direction!r}; back-translation needs a "
                          "target-to-source ('reverse') model")
    domain = _domains(model, [args.domain])[0]
    lines = read_lines(args.mono)
    mono = MonolingualCorpus([vocab.encode(s) or [vocab.stoi["<unk>"]] for s in lines], domain)
    cid = model.meta.get("checkpoint_id")
    syn = back_translate(mono, model, domain=domain, checkpoint_id=cid)
    write_lines(f"{args.out}.src", [vocab.decode(s) for s in syn.sources])
    write_lines(f"{args.out}.tgt", lines)  # targets exactly as given
    meta = {"provenance": syn.provenance, "domain": domain, "size": len(lines),
            "generator": cid, "generator_path": str(args.checkpoint)}
    write_lines(f"{args.out}.meta", [json.dumps(meta, sort_keys=True)])
    return 0


def _test_files(args):
    src, tgt = read_lines(f"{args.test}.src"), read_lines(f"{args.test}.tgt")
    if len(src) != len(tgt):
        raise ConfigError(f"{args.test}: {len(src)} source vs {len(tgt)} target lines")
    return src, tgt


def cmd_evaluate(args):
    model, vocab = load_checkpoint(args.checkpoint)
    domains = _domains(model, args.domains.split(","))
    src, tgt = _test_files(args)
    ids = [vocab.encode(s) or [vocab.stoi["<unk>"]] for s in src]
    rows = []
    print("domain\tbleu")
    for d in domains:
        report = bleu([vocab.decode(h) for h in translate_corpus(model, ids, d)], tgt, smooth=args.smooth)
        rows.append({"domain": d, **json.loads(report.to_json())})
        print(f"{d}\t{report.bleu:.2f}")
    if args.json:
        write_lines(args.json, [json.dumps(r, sort_keys=True) for r in rows])
    return 0


def cmd_probe(args):
    model, vocab = load_checkpoint(args.checkpoint)
    domains = _domains(model, args.domains.split(","))
    blocks = []
    for line in read_lines(args.input):
        ids = vocab.encode(line) or [vocab.stoi["<unk>"]]
        blocks.append("\n".join([f"source\t{line}"] +
                                format_probe(probe_swap(model, ids, domains), vocab.decode)))
    text = "\n\n".join(blocks) + ("\n" if blocks else "")
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args):
    rc = RunConfig.load(args.config, _overrides(args))
    vocab, corpora = load_corpora(rc, need_dev=True)
    cfg = rc.pipeline(len(vocab))
    strategies = args.strategies.split(",")
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
    fractions = [float(f) for f in args.fractions.split(",")]
    table = low_resource_sweep(fractions, strategies, corpora, cfg, smooth=args.smooth)
    text = table.to_tsv()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_make_toy(args):
    from .toy import ambiguity_task, write_ambiguity_task

    path = write_ambiguity_task(ambiguity_task(args.seed), args.out, args.seed, args.rounds)
    print(path)
    return 0


# --- parser -----------------------------------------------------------------

def _overrides(args):
    sets = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        sets.append(f"train.seed={args.seed}")
    if getattr(args, "rounds", None) is not None:
        sets.append(f"train.rounds={args.rounds}")
    return sets


def _run_flags(p):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one setting (repeatable; wins over the file)")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="dafe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one strategy")
    p.add_argument("--strategy", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="greedy-decode a file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--domain", default=IN)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("backtranslate", help="synthesize sources with a reverse model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mono", required=True)
    p.add_argument("--out", required=True, help="output prefix for .src/.tgt/.meta")
    p.add_argument("--domain", default=IN)
    p.set_defaults(func=cmd_backtranslate)

    p = sub.add_parser("evaluate", help="BLEU per domain embedding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="prefix of .src/.tgt files")
    p.add_argument("--domains", default=IN)
    p.add_argument("--smooth", action="store_true")
    p.add_argument("--json", help="also write one JSON report per domain here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("probe", help="decode each line under every listed domain")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--domains", default="in,out")
    p.add_argument("--output")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sweep", help="dev BLEU over fractions of the parallel data")
    p.add_argument("--fractions", default="0.01,0.1,0.5,1.0")
    p.add_argument("--strategies", default="back,dafe")
    p.add_argument("--output")
    p.add_argument("--smooth", action="store_true")
    _run_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("make-toy", help="write the synthetic ambiguity corpora and a config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=2000)
    p.set_defaults(func=cmd_make_toy)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, UsageFailure, UnknownIdError) as e:
        print(f"dafe: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FileNotFoundError, ValueError, UntrainedModelError) as e:
        print(f"dafe: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, nx.EmptyLossError) as e:
        print(f"dafe: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
