"""Domain- and task-aware feature embeddings and the parameter partition.

Each registered domain and task owns one vector of hidden size per encoder
layer (layer 0 is the source word-embedding layer). The vectors are added
to the base network's layer outputs, and each training step only updates
the base network plus the one domain group and one task group it used.
"""

import numpy as np

from .numerics import Parameter, add_rowvec

IN, OUT = "in", "out"
MT, LM = "mt", "lm"


class UnknownIdError(LookupError):
    """Unknown domain/task id or layer index."""


def domain_group(domain):
    return f"domain_{domain}"


def task_group(task):
    return f"task_{task}"


class FeatureEmbeddingTable:
    """Per-(domain, layer) and per-(task, layer) vectors, zero-initialised."""

    def __init__(self, num_layers, hidden_size, domains=(IN, OUT), tasks=(MT, LM)):
        self.num_layers = num_layers
        self.hidden_size = hidden_size
        self.domain_vectors = {}
        self.task_vectors = {}
        for d in domains:
            self.register_domain(d)
        for t in tasks:
            self.register_task(t)

    @property
    def domains(self):
        return list(dict.fromkeys(d for d, _ in self.domain_vectors))

    @property
    def tasks(self):
        return list(dict.fromkeys(t for t, _ in self.task_vectors))

    def _make(self, kind, name):
        return [
            Parameter(f"dafe.{kind}.{name}.{layer}", np.zeros(self.hidden_size),
                      f"{kind}_{name}")
            for layer in range(self.num_layers + 1)
        ]

    def register_domain(self, name):
        if name in self.domains:
            raise ValueError(f"domain {name!r} already registered")
        for layer, p in enumerate(self._make("domain", name)):
            self.domain_vectors[(name, layer)] = p

    def register_task(self, name):
        if name in self.tasks:
            raise ValueError(f"task {name!r} already registered")
        for layer, p in enumerate(self._make("task", name)):
            self.task_vectors[(name, layer)] = p

    def domain_vector(self, domain, layer):
        try:
            return self.domain_vectors[(domain, layer)]
        except KeyError:
            raise UnknownIdError(f"no domain vector for ({domain!r}, layer {layer})") from None

    def task_vector(self, task, layer):
        try:
            return self.task_vectors[(task, layer)]
        except KeyError:
            raise UnknownIdError(f"no task vector for ({task!r}, layer {layer})") from None

    def parameters(self):
        return list(self.domain_vectors.values()) + list(self.task_vectors.values())

    def compose(self, base_out, domain, task, layer):
        """``base_out[p] + domain_vec + task_vec`` at every position ``p``."""
        dv = self.domain_vector(domain, layer)
        tv = self.task_vector(task, layer)
        return add_rowvec(add_rowvec(base_out, dv), tv)


def compose(base_out, table, domain, task, layer):
    return table.compose(base_out, domain, task, layer)


class ParameterPartition:
    """Disjoint parameter groups keyed by group tag."""

    def __init__(self, params):
        self.groups = {}
        seen = set()
        for p in params:
            if p.id in seen:
                raise ValueError(f"duplicate parameter id {p.id!r}")
            seen.add(p.id)
            self.groups.setdefault(p.group, []).append(p)

    def group(self, name):
        return list(self.groups.get(name, ()))

    def active(self, domain, task, embeddings=True):
        """theta_base + theta_domain^domain + theta_task^task."""
        out = self.group("base")
        if embeddings:
            out += self.group(domain_group(domain)) + self.group(task_group(task))
        return out

    def inactive(self, domain, task, embeddings=True):
        keep = {p.id for p in self.active(domain, task, embeddings)}
        return [p for ps in self.groups.values() for p in ps if p.id not in keep]


def active_parameters(model, domain, task):
    """The exact set an optimizer may update on a (domain, task) step."""
    return ParameterPartition(model.parameters()).active(domain, task)


def probe_swap(model, src_ids, domains):
    """Greedy-decode the same source once per domain embedding."""
    for d in domains:
        if model.dafe is not None and d not in model.dafe.domains:
            raise UnknownIdError(f"domain {d!r} is not registered")
    return {d: model.greedy_decode(src_ids, domain=d).tokens for d in domains}


def format_probe(results, detok):
    """``domain<TAB>output`` lines for probe results."""
    return [f"{d}\t{detok(toks)}" for d, toks in results.items()]
