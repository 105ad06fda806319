"""Domain-aware feature embeddings for unsupervised domain adaptation of NMT.

A small numpy Transformer with its own reverse-mode autodiff, per-layer domain
and task vectors on the encoder, the round-robin LM/MT training schedule, the
copy and back-translation baselines, and corpus BLEU.
"""

from .corruption import NoiseSpec, corrupt
from .dafe import IN, LM, MT, OUT, FeatureEmbeddingTable, active_parameters, probe_swap
from .data import MonolingualCorpus, ParallelCorpus, Vocabulary, back_translate, copy_corpus
from .evaluation import bleu, evaluate_model, low_resource_sweep
from .model import DafeTransformer, ModelConfig
from .training import STRATEGIES, Corpora, PipelineConfig, TrainConfig, run_pipeline

__version__ = "0.1.0"
