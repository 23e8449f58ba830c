"""View generation: random shift and intensity jitter."""

from __future__ import annotations

import numpy as np
import pytest

from simtpr.augment import intensity_jitter, make_views, random_shift
from simtpr.verify import oracle_shift_remap


class FixedOffsets:
    """integers() returns a scripted offset grid; standard_normal a constant."""

    def __init__(self, offsets=None, normal=0.0):
        self.offsets = offsets
        self.normal = normal

    def integers(self, lo, hi, size=None):
        return np.asarray(self.offsets)

    def standard_normal(self, size=None):
        return np.full(size, self.normal)


def _batch(rng, n=2, t=3, c=1, h=6, w=6):
    return rng.uniform(0, 1, size=(n, t, c, h, w))


def test_shift_pad_zero_is_identity():
    rng = np.random.default_rng(0)
    x = _batch(rng)
    np.testing.assert_array_equal(random_shift(x, 0, rng), x)


def test_shift_constant_image_invariant():
    x = np.full((1, 2, 1, 5, 5), 0.4)
    out = random_shift(x, 2, np.random.default_rng(1))
    np.testing.assert_allclose(out, x)


def test_shift_forced_offset_matches_remap_oracle():
    ramp = np.arange(16, dtype=np.float64).reshape(1, 1, 1, 4, 4) / 16.0
    pad = 1
    rng = FixedOffsets(offsets=np.array([[[1, 0]]]))  # row offset 1, col offset 0
    out = random_shift(ramp, pad, rng)
    want = oracle_shift_remap(ramp[0, 0, 0], pad, 1, 0)
    np.testing.assert_array_equal(out[0, 0, 0], want)


def test_shift_pixels_come_from_input():
    rng = np.random.default_rng(3)
    x = _batch(rng, n=1, t=1)
    out = random_shift(x, 2, rng)
    assert set(np.unique(out)) <= set(np.unique(x))


def test_shift_rejects_oversized_pad():
    x = np.zeros((1, 1, 1, 4, 4))
    with pytest.raises(ValueError):
        random_shift(x, 4, np.random.default_rng(0))


def test_jitter_scale_zero_identity():
    rng = np.random.default_rng(4)
    x = _batch(rng)
    np.testing.assert_array_equal(intensity_jitter(x, 0.0, rng), x)


def test_jitter_forced_zero_draw_identity():
    x = _batch(np.random.default_rng(5))
    out = intensity_jitter(x, 0.05, FixedOffsets(normal=0.0))
    np.testing.assert_array_equal(out, x)


def test_jitter_matches_scalar_recomputation():
    x = _batch(np.random.default_rng(6), n=2, t=2).astype(np.float64)
    seed = 42
    out = intensity_jitter(x, 0.05, np.random.default_rng(seed))
    r = np.clip(np.random.default_rng(seed).standard_normal((2, 2)), -2.0, 2.0)
    for i in range(2):
        for j in range(2):
            np.testing.assert_allclose(out[i, j], x[i, j] * (1 + 0.05 * r[i, j]),
                                       atol=1e-6)


def test_jitter_draw_is_clipped():
    x = np.ones((1, 10_000, 1, 1, 1))
    out = intensity_jitter(x, 1.0, np.random.default_rng(7))
    assert out.min() >= 1.0 - 2.0 - 1e-9
    assert out.max() <= 1.0 + 2.0 + 1e-9


def test_make_views_degenerate_settings_identity():
    x = _batch(np.random.default_rng(8))
    views = make_views(x, np.random.default_rng(1), np.random.default_rng(2),
                       pad=0, scale=0.0)
    np.testing.assert_array_equal(views.view1, x)
    np.testing.assert_array_equal(views.view2, x)


def test_make_views_streams_are_independent():
    x = _batch(np.random.default_rng(9), h=8, w=8)
    equal = 0
    for seed in range(100):
        views = make_views(x, np.random.default_rng(2 * seed),
                           np.random.default_rng(2 * seed + 1))
        if np.array_equal(views.view1, views.view2):
            equal += 1
    assert equal == 0


def test_make_views_preserves_shape():
    for n, t in [(1, 1), (3, 5), (2, 7)]:
        x = _batch(np.random.default_rng(n * 10 + t), n=n, t=t, h=9, w=9)
        views = make_views(x, np.random.default_rng(0), np.random.default_rng(1))
        assert views.view1.shape == x.shape
        assert views.view2.shape == x.shape
        assert np.all(np.isfinite(views.view1))
