"""Collapse and representation-quality metrics.

Feature rank counts singular values of a sampled projection matrix above
a threshold; the cosine-vs-lag curve tracks how quickly representations
of temporally distant states decorrelate. All diagnostics run the model
in evaluation mode (batch-norm running statistics) so they do not depend
on diagnostic batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .ndgrad import Tensor, gram_eigenvalues, no_grad, ops
from .synthdata import Dataset

RANK_SAMPLES_DEFAULT = 1000
RANK_EPS_DEFAULT = 0.01

_ENCODE_CHUNK = 256


@dataclass
class RankReport:
    feature_rank: int
    singular_values: np.ndarray
    n_samples: int
    epsilon: float

    def to_dict(self) -> dict:
        return {
            "feature_rank": int(self.feature_rank),
            "singular_values": [float(v) for v in self.singular_values],
            "n_samples": int(self.n_samples),
            "epsilon": float(self.epsilon),
        }


def feature_rank(z: "Tensor | np.ndarray", epsilon: float = RANK_EPS_DEFAULT) -> RankReport:
    """Count singular values of Z above epsilon.

    Singular values come from the Jacobi eigensolver on the Gram matrix.
    """
    arr = z.data if isinstance(z, Tensor) else np.asarray(z)
    singular = np.sqrt(gram_eigenvalues(arr))
    rank = int((singular > epsilon).sum())
    return RankReport(rank, singular, arr.shape[0], epsilon)


def projections_at(bundle, dataset: Dataset, traj_idx: np.ndarray,
                   time_idx: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Encode + project individual states in eval mode, chunked."""
    dtype = bundle.config.dtype
    out = np.empty((len(traj_idx), bundle.config.latent_dim), dtype=dtype)
    with no_grad():
        for lo in range(0, len(traj_idx), _ENCODE_CHUNK):
            hi = min(lo + _ENCODE_CHUNK, len(traj_idx))
            frames = dataset.frames_float(traj_idx[lo:hi], time_idx[lo:hi], dtype=dtype)
            feats = model_mod.encode(bundle, frames[:, None], mode="eval")  # [M,1,C,H,W]
            z = model_mod.project(bundle, feats, mode="eval")
            if normalize:
                z = ops.l2_normalize(z)
            out[lo:hi] = z.data[:, 0, :]
    return out


def collect_projections(bundle, dataset: Dataset, n: int,
                        rng: np.random.Generator,
                        normalize: bool = False) -> np.ndarray:
    """Uniformly sample n states and return their (un-normalized) projections."""
    traj = rng.integers(0, dataset.num_trajectories, size=n)
    time = rng.integers(0, dataset.trajectory_length, size=n)
    return projections_at(bundle, dataset, traj, time, normalize=normalize)


def rank_of_model(bundle, dataset: Dataset, n: int = RANK_SAMPLES_DEFAULT,
                  epsilon: float = RANK_EPS_DEFAULT,
                  rng: np.random.Generator | None = None,
                  normalize: bool = False) -> RankReport:
    rng = rng or np.random.default_rng(0)
    n = min(n, dataset.total_states)
    return feature_rank(collect_projections(bundle, dataset, n, rng, normalize), epsilon)


def cosine_curve(bundle, dataset: Dataset, k_max: int, n_pairs: int,
                 rng: np.random.Generator, exhaustive: bool = False) -> list[float]:
    """Entry k-1 holds the mean cos(z_t, z_{t+k}) over (trajectory, t) pairs.

    Pairs are sampled uniformly unless `exhaustive`, which enumerates every
    valid (trajectory, t) per lag. Uses normalized projections, so the
    cosine is a plain dot product.
    """
    length = dataset.trajectory_length
    if k_max >= length:
        raise ValueError(f"k_max {k_max} must be below trajectory length {length}")

    if exhaustive:
        n = dataset.num_trajectories
        traj = np.repeat(np.arange(n), length)
        time = np.tile(np.arange(length), n)
        z = projections_at(bundle, dataset, traj, time, normalize=True)
        z = z.reshape(n, length, -1)
        curve = []
        for k in range(1, k_max + 1):
            cos = np.sum(z[:, :length - k] * z[:, k:], axis=-1)
            curve.append(float(cos.mean()))
        return curve

    traj = rng.integers(0, dataset.num_trajectories, size=n_pairs)
    t0 = rng.integers(0, length - k_max, size=n_pairs)
    base = projections_at(bundle, dataset, traj, t0, normalize=True)
    curve = []
    for k in range(1, k_max + 1):
        ahead = projections_at(bundle, dataset, traj, t0 + k, normalize=True)
        curve.append(float(np.mean(np.sum(base * ahead, axis=1))))
    return curve


def correlation_of_views(bundle, dataset: Dataset, n: int,
                         rng: np.random.Generator,
                         pad: int = 4, scale: float = 0.05) -> np.ndarray:
    """Cross-correlation matrix of two augmented views of n sampled states."""
    from .augment import make_views
    from .losses import cross_correlation

    dtype = bundle.config.dtype
    traj = rng.integers(0, dataset.num_trajectories, size=n)
    time = rng.integers(0, dataset.trajectory_length, size=n)
    frames = dataset.frames_float(traj, time, dtype=dtype)[:, None]  # [n,1,C,H,W]
    views = make_views(frames, rng, rng, pad=pad, scale=scale)

    def normalized_projection(view):
        with no_grad():
            z = model_mod.project(bundle, model_mod.encode(bundle, view, mode="eval"),
                                  mode="eval")
            return ops.l2_normalize(z)

    z1 = normalized_projection(views.view1)
    z2 = normalized_projection(views.view2)
    d = bundle.config.latent_dim
    with no_grad():
        c = cross_correlation(ops.reshape(z1, (n, d)), ops.reshape(z2, (n, d)))
    return c.data


def corr_stats(c: "Tensor | np.ndarray") -> dict:
    """Summary of a correlation matrix: off-diagonal mass and diagonal level."""
    arr = c.data if isinstance(c, Tensor) else np.asarray(c)
    d = arr.shape[0]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValueError(f"expected a square matrix, got {arr.shape}")
    off_mask = ~np.eye(d, dtype=bool)
    off = np.abs(arr[off_mask])
    return {
        "mean_abs_off_diag": float(off.mean()) if off.size else 0.0,
        "mean_on_diag": float(np.diag(arr).mean()),
        "max_abs_off_diag": float(off.max()) if off.size else 0.0,
    }


def export_embeddings(z: np.ndarray, labels, path: str) -> None:
    """CSV with header dim_0..dim_{d-1},label; shortest round-trip decimals."""
    z = np.asarray(z)
    labels = list(labels)
    if z.shape[0] != len(labels):
        raise ValueError(f"{z.shape[0]} rows vs {len(labels)} labels")
    d = z.shape[1]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join([f"dim_{i}" for i in range(d)] + ["label"]) + "\n")
        for row, label in zip(z, labels):
            cells = [repr(float(v)) for v in row]
            cells.append(str(label))
            fh.write(",".join(cells) + "\n")
