"""Counter-based random streams.

Every stochastic component draws from a Philox generator keyed by
``(root_seed, tag, a, b)``.  Philox is counter-based: a stream is fully
determined by its key, so draws never depend on execution order or on how
many worker threads are running.  Components that need randomness per
(epoch, sample) simply derive a fresh stream instead of sharing state.

Tags keep the key spaces of unrelated consumers disjoint.
"""

from __future__ import annotations

import numpy as np

# Stream tags.  Values are arbitrary but frozen: changing them changes
# every seeded run.
TAG_INIT = 1          # weight initialization
TAG_NOISE_TRAIN = 2   # substrate noise during training passes
TAG_NOISE_EVAL = 3    # substrate noise during evaluation passes
TAG_DROPOUT = 4       # per-batch dropout masks
TAG_SHUFFLE = 5       # per-epoch sample order
TAG_DECALIB = 6       # parameter redraws
TAG_AUGMENT = 7       # per-sample augmentation draws
TAG_SILENCE = 8       # ablation masks
TAG_SYNTH = 9         # synthetic dataset generation

_MASK64 = (1 << 64) - 1


def stream_key(seed: int, tag: int, a: int = 0, b: int = 0) -> np.ndarray:
    """Pack (tag, a, b) into the second Philox key word.

    ``a`` (epoch-like) and ``b`` (sample-like) each get 24 bits; tag gets the
    top 16.  Ranges are asserted so collisions cannot happen silently.
    """
    if not (0 <= tag < 1 << 16 and 0 <= a < 1 << 24 and 0 <= b < 1 << 24):
        raise ValueError(f"stream index out of range: tag={tag} a={a} b={b}")
    low = (tag << 48) | (a << 24) | b
    return np.array([seed & _MASK64, low], dtype=np.uint64)


def stream(seed: int, tag: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Independent generator for the given (seed, tag, a, b) coordinate."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, tag, a, b)))
