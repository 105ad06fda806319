"""Word-drop + local-shuffle noise for the denoising LM objective."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSpec:
    p_drop: float = 0.1
    k: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError(f"p_drop={self.p_drop} outside [0, 1]")
        if self.k < 0 or int(self.k) != self.k:
            raise ValueError(f"k={self.k} must be a non-negative integer")


class EmptyInputError(ValueError):
    pass


def corrupt(tokens, spec: NoiseSpec, rng=None):
    """Drop each token with prob ``p_drop`` (keeping at least one), then
    shuffle survivors so none moves more than ``k`` places.

    Without ``rng`` the draw is seeded from ``spec.seed``.
    """
    tokens = np.asarray(tokens)
    n = len(tokens)
    if n == 0:
        raise EmptyInputError("cannot corrupt an empty sentence")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    keep = rng.random(n) >= spec.p_drop
    if not keep.any():
        keep[rng.integers(n)] = True
    out = tokens[keep]
    if spec.k > 0 and len(out) > 1:
        keys = np.arange(len(out)) + rng.uniform(0.0, spec.k + 1, len(out))
        out = out[np.argsort(keys, kind="stable")]
    return out.tolist()
