"""Training objectives: similarity, decorrelation, and the ablation losses.

The similarity term is a symmetrized stop-gradient MSE between normalized
predictions and k-step-ahead normalized targets from the other view. The
decorrelation term standardizes the cross-correlation matrix of the two
views' normalized projections toward the identity. Ablations replace the
similarity term with an InfoNCE contrastive loss or, for the non-causal
transition, a masked-reconstruction loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndgrad import Tensor, ops, stop_gradient, tensor

STD_FLOOR = 1e-8

SIMILARITY_KINDS = ("mse", "contrastive", "recon")


@dataclass(frozen=True)
class LossSettings:
    kind: str = "mse"
    k: int = 1
    lambda_o: float = 0.005
    lambda_d: float = 0.01
    lambda_a: float | None = None  # None -> state mode, no action loss
    temperature: float = 0.1

    def __post_init__(self):
        if self.kind not in SIMILARITY_KINDS:
            raise ValueError(
                f"no active similarity-type loss: kind must be one of "
                f"{SIMILARITY_KINDS}, got {self.kind!r}")


@dataclass
class LossBreakdown:
    """Scalar view of one step's objective; `total` keeps the graph."""

    total: Tensor
    sim: float | None = None
    contrastive: float | None = None
    recon: float | None = None
    decorr: float | None = None
    decorr_on: float | None = None
    decorr_off: float | None = None
    action: float | None = None
    lambda_o: float = 0.0
    lambda_d: float = 0.0
    lambda_a: float | None = None
    temperature: float | None = None

    def weighted_sum(self) -> float:
        """Recombine active components; should match total to 1e-6."""
        acc = next(v for v in (self.sim, self.contrastive, self.recon) if v is not None)
        if self.decorr is not None:
            acc += self.lambda_d * self.decorr
        if self.action is not None:
            acc += (self.lambda_a or 0.0) * self.action
        return acc


# ---------------------------------------------------------------------------
# similarity (MSE between predictions and shifted targets)
# ---------------------------------------------------------------------------

def similarity_distance(q: Tensor, z: Tensor, k: int) -> Tensor:
    """Mean over (n, t<=T-k) of ||q_{n,t} - z_{n,t+k}||^2.

    Positive sign: minimizing it maximizes the prediction/target cosine.
    """
    n, t, _ = q.shape
    if not 1 <= k < t:
        raise ValueError(f"future offset k={k} must satisfy 1 <= k < T={t}")
    diff = ops.sub(ops.slice_(q, (slice(None), slice(0, t - k))),
                   ops.slice_(z, (slice(None), slice(k, None))))
    return ops.smul(ops.sum(ops.power(diff, 2.0)), 1.0 / (n * (t - k)))


def similarity_loss(q1: Tensor, q2: Tensor, z1: Tensor, z2: Tensor, k: int) -> Tensor:
    """Symmetrized distance with stop-gradient targets."""
    side1 = similarity_distance(q1, stop_gradient(z2), k)
    side2 = similarity_distance(q2, stop_gradient(z1), k)
    return ops.add(ops.smul(side1, 0.5), ops.smul(side2, 0.5))


# ---------------------------------------------------------------------------
# feature decorrelation
# ---------------------------------------------------------------------------

def cross_correlation(z1: Tensor, z2: Tensor, std_floor: float = STD_FLOOR) -> Tensor:
    """[d, d] correlation of column-standardized [M, d] inputs, divisor M.

    Columns are mean-centered and divided by their population standard
    deviation (floored, so fully collapsed constant columns yield a ~0 row
    instead of NaN and keep penalizing collapse).
    """
    if z1.ndim != 2 or z1.shape != z2.shape:
        raise ValueError(f"expected matching [M, d] inputs, got {z1.shape} vs {z2.shape}")
    m = z1.shape[0]
    if m < 2:
        raise ValueError("cross_correlation needs at least 2 rows")

    def standardize(z):
        mu = ops.mean(z, axis=0, keepdims=True)
        centered = ops.sub(z, mu)
        var = ops.mean(ops.power(centered, 2.0), axis=0, keepdims=True)
        # clip the variance before the sqrt: same floored std, no 1/0 in backward
        std = ops.sqrt(ops.clip_min(var, std_floor * std_floor))
        return ops.div(centered, std)

    a = standardize(z1)
    b = standardize(z2)
    return ops.smul(ops.matmul(ops.transpose(a, (1, 0)), b), 1.0 / m)


def decorrelation_loss(c: Tensor, lambda_o: float) -> tuple[Tensor, Tensor, Tensor]:
    """sum_i (1 - C_ii)^2 + lambda_o * sum_{i != j} C_ij^2."""
    d = c.shape[0]
    if c.ndim != 2 or c.shape[1] != d:
        raise ValueError(f"expected a square matrix, got {c.shape}")
    eye = tensor(np.eye(d, dtype=c.dtype))
    on = ops.sum(ops.power(ops.sub(eye, ops.mul(c, eye)), 2.0))
    off_mask = tensor(np.ones((d, d), dtype=c.dtype) - np.eye(d, dtype=c.dtype))
    off = ops.sum(ops.power(ops.mul(c, off_mask), 2.0))
    return ops.add(on, ops.smul(off, lambda_o)), on, off


# ---------------------------------------------------------------------------
# ablation losses
# ---------------------------------------------------------------------------

def contrastive_loss(q: Tensor, z: Tensor, temperature: float) -> Tensor:
    """One-sided InfoNCE over [M, d] rows; row m's positive is z row m.

    Negatives are every other row of the target matrix, across sequences
    and time.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if q.ndim != 2 or q.shape != z.shape:
        raise ValueError(f"expected matching [M, d] inputs, got {q.shape} vs {z.shape}")
    m = q.shape[0]
    logits = ops.smul(ops.matmul(q, ops.transpose(z, (1, 0))), 1.0 / temperature)
    probs = ops.softmax(logits)
    eye = tensor(np.eye(m, dtype=q.dtype))
    picked = ops.sum(ops.mul(probs, eye), axis=-1)
    return ops.smul(ops.sum(ops.log(picked)), -1.0 / m)


def shifted_flatten(q: Tensor, z: Tensor, k: int) -> tuple[Tensor, Tensor]:
    """Align predictions with k-step-ahead targets and flatten to [M, d]."""
    n, t, d = q.shape
    if not 1 <= k < t:
        raise ValueError(f"future offset k={k} must satisfy 1 <= k < T={t}")
    m = n * (t - k)
    qf = ops.reshape(ops.slice_(q, (slice(None), slice(0, t - k))), (m, d))
    zf = ops.reshape(ops.slice_(z, (slice(None), slice(k, None))), (m, d))
    return qf, zf


def action_loss(logits: Tensor, actions: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the taken action: [N,T,n_a] x [N,T]."""
    n, t, n_a = logits.shape
    actions = np.asarray(actions)
    if actions.shape != (n, t):
        raise ValueError(f"actions shape {actions.shape} does not match logits {logits.shape}")
    if actions.min() < 0 or actions.max() >= n_a:
        raise ValueError("action index out of range")
    onehot = np.zeros((n, t, n_a), dtype=logits.dtype)
    np.put_along_axis(onehot, actions[:, :, None], 1.0, axis=-1)
    probs = ops.softmax(logits)
    picked = ops.sum(ops.mul(probs, tensor(onehot)), axis=-1)
    return ops.smul(ops.sum(ops.log(picked)), -1.0 / (n * t))


def recon_loss(q: Tensor, z: Tensor, masked: np.ndarray) -> Tensor:
    """MSE restricted to masked positions; replaces the similarity term.

    q, z are [N, T, d] normalized predictions / cross-view targets and
    `masked` is the boolean [N, T] set returned by the masked transition.
    """
    if q.shape != z.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {z.shape}")
    masked = np.asarray(masked, dtype=bool)
    count = int(masked.sum())
    if count == 0:
        raise ValueError("recon_loss: empty mask set")
    weights = tensor(masked[:, :, None].astype(q.dtype))
    sq = ops.power(ops.sub(q, z), 2.0)
    return ops.smul(ops.sum(ops.mul(sq, weights)), 1.0 / count)


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------

def total_loss(settings: LossSettings, fwd, actions: np.ndarray | None = None) -> LossBreakdown:
    """Combine the active components for one step.

    `fwd` is a StateForward or DemoForward; demo mode (lambda_a set) needs
    `actions` and logits on `fwd`.
    """
    breakdown = LossBreakdown(
        total=None, lambda_o=settings.lambda_o, lambda_d=settings.lambda_d,
        lambda_a=settings.lambda_a,
        temperature=settings.temperature if settings.kind == "contrastive" else None)

    if settings.kind == "mse":
        sim = similarity_loss(fwd.q1, fwd.q2, fwd.z1, fwd.z2, settings.k)
        breakdown.sim = sim.item()
    elif settings.kind == "contrastive":
        q1f, z2f = shifted_flatten(fwd.q1, stop_gradient(fwd.z2), settings.k)
        q2f, z1f = shifted_flatten(fwd.q2, stop_gradient(fwd.z1), settings.k)
        side1 = contrastive_loss(q1f, z2f, settings.temperature)
        side2 = contrastive_loss(q2f, z1f, settings.temperature)
        sim = ops.add(ops.smul(side1, 0.5), ops.smul(side2, 0.5))
        breakdown.contrastive = sim.item()
    else:  # recon
        if fwd.mask1 is None or fwd.mask2 is None:
            raise ValueError("recon loss needs mask positions from the masked transition")
        side1 = recon_loss(fwd.q1, stop_gradient(fwd.z2), fwd.mask1)
        side2 = recon_loss(fwd.q2, stop_gradient(fwd.z1), fwd.mask2)
        sim = ops.add(ops.smul(side1, 0.5), ops.smul(side2, 0.5))
        breakdown.recon = sim.item()

    total = sim
    if settings.lambda_d != 0.0:
        n, t, d = fwd.z1.shape
        c = cross_correlation(ops.reshape(fwd.z1, (n * t, d)),
                              ops.reshape(fwd.z2, (n * t, d)))
        dec, on, off = decorrelation_loss(c, settings.lambda_o)
        breakdown.decorr = dec.item()
        breakdown.decorr_on = on.item()
        breakdown.decorr_off = off.item()
        total = ops.add(total, ops.smul(dec, settings.lambda_d))

    if settings.lambda_a is not None:
        if actions is None:
            raise ValueError("demo mode needs action labels")
        act1 = action_loss(fwd.logits1, actions)
        act2 = action_loss(fwd.logits2, actions)
        act = ops.add(ops.smul(act1, 0.5), ops.smul(act2, 0.5))
        breakdown.action = act.item()
        total = ops.add(total, ops.smul(act, settings.lambda_a))

    breakdown.total = total
    return breakdown
