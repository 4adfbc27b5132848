import numpy as np

from naum.harness import init_mc, synthetic_mc
from naum.rng import STREAM_DATA, STREAM_INIT, STREAM_MASK, make_rng, standard_normal


def test_streams_are_deterministic_and_distinct():
    a = make_rng(5).random(8)
    assert a.tobytes() == make_rng(5, STREAM_INIT).random(8).tobytes()
    others = [make_rng(5, STREAM_DATA).random(8), make_rng(5, STREAM_MASK).random(8),
              make_rng(6).random(8)]
    assert all(not np.array_equal(a, b) for b in others)


def test_same_seed_data_and_start_are_independent():
    X, Y = init_mc(30, 20, 3, seed=4)
    M = synthetic_mc(30, 20, 3, seed=4)
    assert np.linalg.norm(X @ Y.T - M) > 0.5 * np.linalg.norm(M)


def test_standard_normal_moments_and_finiteness():
    z = standard_normal(make_rng(0), (200_000,))
    assert np.all(np.isfinite(z))
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


def test_standard_normal_zero_uniform_is_finite():
    class Zeros:
        def random(self, shape):
            return np.zeros(shape)
    assert np.all(np.isfinite(standard_normal(Zeros(), (3,))))
