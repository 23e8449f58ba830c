"""Stochastic view generation: random shift plus intensity jitter.

Two independent augmentations of the same state sequence produce the two
views consumed by the Siamese pipeline. Augmentation happens on raw
numpy arrays before the autodiff graph begins; nothing here is traced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHIFT_PAD = 4
JITTER_SCALE = 0.05
JITTER_CLIP = 2.0


@dataclass
class AugmentedViews:
    view1: np.ndarray
    view2: np.ndarray


def random_shift(x: np.ndarray, pad: int, rng: np.random.Generator) -> np.ndarray:
    """Replicate-pad each frame by `pad`, crop at a random integer offset.

    One offset pair per (sequence, frame), drawn uniformly from
    [0, 2*pad]^2. x is [N, T, C, H, W].
    """
    if pad < 0:
        raise ValueError("pad must be >= 0")
    if pad == 0:
        return x.copy()
    n, t, c, h, w = x.shape
    if pad >= min(h, w):
        raise ValueError(f"pad {pad} too large for {h}x{w} frames")

    offsets = rng.integers(0, 2 * pad + 1, size=(n, t, 2))
    rows_base = np.arange(h)
    cols_base = np.arange(w)
    # source index = clip(dest + offset - pad) into the original frame
    rows = np.clip(rows_base[None, None, :] + offsets[:, :, 0:1] - pad, 0, h - 1)
    cols = np.clip(cols_base[None, None, :] + offsets[:, :, 1:2] - pad, 0, w - 1)
    ni = np.arange(n)[:, None, None, None, None]
    ti = np.arange(t)[None, :, None, None, None]
    ci = np.arange(c)[None, None, :, None, None]
    ri = rows[:, :, None, :, None]
    wi = cols[:, :, None, None, :]
    return x[ni, ti, ci, ri, wi]


def intensity_jitter(x: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Multiply each frame by (1 + scale * r), r ~ N(0,1) clipped to [-2, 2]."""
    if scale < 0:
        raise ValueError("scale must be >= 0")
    n, t = x.shape[:2]
    r = np.clip(rng.standard_normal((n, t)), -JITTER_CLIP, JITTER_CLIP)
    factor = (1.0 + scale * r).astype(x.dtype)
    return x * factor[:, :, None, None, None]


def make_views(observations: np.ndarray, rng1: np.random.Generator,
               rng2: np.random.Generator, pad: int = SHIFT_PAD,
               scale: float = JITTER_SCALE) -> AugmentedViews:
    """Two independent views: shift then jitter, each with its own draw stream."""
    v1 = intensity_jitter(random_shift(observations, pad, rng1), scale, rng1)
    v2 = intensity_jitter(random_shift(observations, pad, rng2), scale, rng2)
    return AugmentedViews(v1, v2)
