"""Slow, loop-based oracles used by the test suite.

Everything here recomputes quantities with explicit index-by-index loops
in float64 and shares no code with the main path beyond raw numpy arrays.
Oracles are intentionally unvectorized; they exist to certify the fast
implementations, not to be fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OracleReport:
    """Outcome of comparing an implementation against an oracle."""

    name: str
    max_abs_err: float = 0.0
    max_rel_err: float = 0.0
    cases: int = 0
    tolerance: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def add_case(self, got: float, want: float) -> None:
        abs_err = abs(got - want)
        rel_err = abs_err / max(abs(want), 1e-12)
        self.max_abs_err = max(self.max_abs_err, abs_err)
        self.max_rel_err = max(self.max_rel_err, rel_err)
        self.cases += 1
        if rel_err > self.tolerance:
            self.failures.append((self.cases, got, want, rel_err))


# ---------------------------------------------------------------------------
# loss oracles (explicit summation, float64)
# ---------------------------------------------------------------------------

def oracle_similarity_distance(q: np.ndarray, z: np.ndarray, k: int) -> float:
    """Mean squared error between q[n, t] and z[n, t + k]."""
    q = np.asarray(q, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    n, t, d = q.shape
    total = 0.0
    for i in range(n):
        for j in range(t - k):
            acc = 0.0
            for a in range(d):
                diff = q[i, j, a] - z[i, j + k, a]
                acc += diff * diff
            total += acc
    return total / (n * (t - k))


def oracle_similarity_loss(q1, q2, z1, z2, k: int) -> float:
    return 0.5 * oracle_similarity_distance(q1, z2, k) + \
        0.5 * oracle_similarity_distance(q2, z1, k)


def oracle_cross_correlation(z1: np.ndarray, z2: np.ndarray,
                             std_floor: float = 1e-8) -> np.ndarray:
    """Column-standardized cross-correlation matrix, divisor = row count."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    m, d = z1.shape

    def standardize(z):
        out = np.empty_like(z)
        for j in range(d):
            mu = 0.0
            for i in range(m):
                mu += z[i, j]
            mu /= m
            var = 0.0
            for i in range(m):
                var += (z[i, j] - mu) ** 2
            std = max(math.sqrt(var / m), std_floor)
            for i in range(m):
                out[i, j] = (z[i, j] - mu) / std
        return out

    a = standardize(z1)
    b = standardize(z2)
    c = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for r in range(m):
                acc += a[r, i] * b[r, j]
            c[i, j] = acc / m
    return c


def oracle_decorrelation_loss(c: np.ndarray, lambda_o: float) -> tuple[float, float, float]:
    c = np.asarray(c, dtype=np.float64)
    d = c.shape[0]
    on = 0.0
    off = 0.0
    for i in range(d):
        on += (1.0 - c[i, i]) ** 2
        for j in range(d):
            if j != i:
                off += c[i, j] ** 2
    return on + lambda_o * off, on, off


def oracle_contrastive_loss(q: np.ndarray, z: np.ndarray, temperature: float) -> float:
    """One-sided InfoNCE with matched rows as positives."""
    q = np.asarray(q, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    m = q.shape[0]
    total = 0.0
    for i in range(m):
        logits = [float(np.dot(q[i], z[j])) / temperature for j in range(m)]
        hi = max(logits)
        lse = hi + math.log(sum(math.exp(l - hi) for l in logits))
        total += -(logits[i] - lse)
    return total / m


def oracle_action_loss(logits: np.ndarray, actions: np.ndarray) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    actions = np.asarray(actions)
    n, t, n_a = logits.shape
    total = 0.0
    for i in range(n):
        for j in range(t):
            row = logits[i, j]
            hi = row.max()
            lse = hi + math.log(sum(math.exp(v - hi) for v in row))
            total += -(row[actions[i, j]] - lse)
    return total / (n * t)


def oracle_recon_loss(q: np.ndarray, z: np.ndarray, mask: np.ndarray) -> float:
    """MSE between q and z restricted to masked (n, t) positions."""
    q = np.asarray(q, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n, t, d = q.shape
    total = 0.0
    count = 0
    for i in range(n):
        for j in range(t):
            if mask[i, j]:
                count += 1
                for a in range(d):
                    diff = q[i, j, a] - z[i, j, a]
                    total += diff * diff
    if count == 0:
        raise ValueError("oracle_recon_loss: empty mask")
    return total / count


def oracle_cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = math.sqrt(float((u * u).sum()))
    nv = math.sqrt(float((v * v).sum()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float((u * v).sum()) / (nu * nv)


# ---------------------------------------------------------------------------
# finite-difference gradients
# ---------------------------------------------------------------------------

def finite_diff_grads(loss_fn, arrays: dict[str, np.ndarray],
                      step: float = 1e-3) -> dict[str, np.ndarray]:
    """Central differences of a scalar function of named float64 arrays.

    `loss_fn` is called with no arguments and must read the (mutated)
    arrays; only use on tiny models.
    """
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn())
            flat[i] = orig - step
            lo = float(loss_fn())
            flat[i] = orig
            gf[i] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error between two gradient arrays."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(n).max(initial=0.0)), 1e-12)
    return float(np.abs(a - n).max(initial=0.0)) / scale


# ---------------------------------------------------------------------------
# singular values by power iteration with deflation
# ---------------------------------------------------------------------------

def oracle_singular_values(z: np.ndarray, max_iter: int = 10_000,
                           tol: float = 1e-14) -> np.ndarray:
    """Descending singular values of Z via power iteration on Z^T Z."""
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[1]
    g = z.T @ z
    rng = np.random.default_rng(0)
    values = []
    for _ in range(d):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = g @ v
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                lam = 0.0
                break
            w /= norm
            if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
                v = w
                lam = float(v @ g @ v)
                break
            v = w
        else:
            lam = float(v @ g @ v)
        lam = max(lam, 0.0)
        values.append(lam)
        g = g - lam * np.outer(v, v)
    return np.sqrt(np.sort(np.asarray(values))[::-1])


# ---------------------------------------------------------------------------
# augmentation and environment re-simulation
# ---------------------------------------------------------------------------

def oracle_shift_remap(img: np.ndarray, pad: int, off_r: int, off_c: int) -> np.ndarray:
    """Replicate-pad then crop, computed pixel by pixel."""
    img = np.asarray(img)
    h, w = img.shape
    out = np.empty_like(img)
    for r in range(h):
        for c in range(w):
            src_r = min(max(r + off_r - pad, 0), h - 1)
            src_c = min(max(c + off_c - pad, 0), w - 1)
            out[r, c] = img[src_r, src_c]
    return out


def resimulate_rewards(seed: int, num_trajectories: int, trajectory_length: int,
                       height: int, width: int, epsilon: float = 0.3) -> np.ndarray:
    """Replay the moving-dot gridworld and return the reward grid.

    Independent re-implementation of the environment dynamics: reflecting
    walls, fixed goal at (H-2, W-2), reward 1 on goal entry, respawn on
    the step after, epsilon-greedy row-first policy. Consumes the same
    per-trajectory seeded stream as the generator (seed XOR index).
    """
    goal = (height - 2, width - 2)
    rewards = np.zeros((num_trajectories, trajectory_length), dtype=np.uint8)
    for traj in range(num_trajectories):
        rng = np.random.default_rng(seed ^ traj)
        r, c = _spawn(rng, height, width, goal)
        for t in range(trajectory_length):
            a = _policy_action(rng, (r, c), goal, epsilon)
            if t == trajectory_length - 1:
                break
            if (r, c) == goal:
                # the goal respawns the dot; the respawn cell is never the goal
                r, c = _spawn(rng, height, width, goal)
            else:
                r, c = _move(r, c, a, height, width)
                if (r, c) == goal:
                    rewards[traj, t + 1] = 1
    return rewards


def _spawn(rng, height, width, goal):
    while True:
        r = int(rng.integers(0, height))
        c = int(rng.integers(0, width))
        if (r, c) != goal:
            return r, c


def _policy_action(rng, pos, goal, epsilon) -> int:
    explore = rng.uniform() < epsilon
    if explore:
        return int(rng.integers(0, 5))
    r, c = pos
    gr, gc = goal
    if r > gr:
        return 0  # up
    if r < gr:
        return 1  # down
    if c > gc:
        return 2  # left
    if c < gc:
        return 3  # right
    return 4  # no-op


def _move(r, c, action, height, width):
    if action == 0:
        r -= 1
    elif action == 1:
        r += 1
    elif action == 2:
        c -= 1
    elif action == 3:
        c += 1
    if r < 0:
        r = -r
    elif r >= height:
        r = 2 * (height - 1) - r
    if c < 0:
        c = -c
    elif c >= width:
        c = 2 * (width - 1) - c
    return r, c


def exhaustive_cosine_curve(projections: np.ndarray, k_max: int) -> list[float]:
    """Mean cos(z_t, z_{t+k}) over every (trajectory, t) pair, per k.

    `projections` is [num_traj, length, d].
    """
    num_traj, length, _ = projections.shape
    curve = []
    for k in range(1, k_max + 1):
        vals = []
        for i in range(num_traj):
            for t in range(length - k):
                vals.append(oracle_cosine(projections[i, t], projections[i, t + k]))
        curve.append(float(np.mean(vals)))
    return curve
