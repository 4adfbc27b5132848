"""Seeded random streams.

All randomness goes through numpy's counter-based Philox bit generator,
keyed by ``(seed, stream)`` through a ``SeedSequence``. Separate streams keep
synthetic data, sampling masks and starting points independent even when
they are generated from the same seed. Normal variates are produced by the inverse normal CDF applied to uniforms,
so the values depend only on the uniform stream and not on the sampling
algorithm numpy happens to use for ``standard_normal``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri


STREAM_INIT = 0
STREAM_DATA = 1
STREAM_MASK = 2


def make_rng(seed, stream=STREAM_INIT) -> np.random.Generator:
    seq = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(seq))


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    # random() lies in [0, 1); move off 0 to keep ndtri finite
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return ndtri(u)
