"""Eigenvalues of the Gram matrix by cyclic Jacobi rotations.

Singular values of a feature matrix Z are the square roots of the
eigenvalues of Z^T Z; the rank diagnostics build on this kernel. The
solver is not differentiable and always works in float64.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

MAX_SWEEPS = 100
TOL_SCALE = 1e-10


class JacobiConvergenceError(RuntimeError):
    def __init__(self, residual: float, sweeps: int):
        self.residual = residual
        self.sweeps = sweeps
        super().__init__(
            f"Jacobi iteration did not converge in {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})")


def _max_offdiag(a: np.ndarray) -> float:
    d = a.shape[0]
    if d < 2:
        return 0.0
    iu = np.triu_indices(d, k=1)
    return float(np.abs(a[iu]).max())


def jacobi_eigenvalues(g: np.ndarray, max_sweeps: int = MAX_SWEEPS,
                       tol_scale: float = TOL_SCALE) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, descending, via cyclic Jacobi.

    Sweeps the strict upper triangle in a fixed row-major order, so the
    result is reproducible. Convergence: max |off-diagonal| below
    ``tol_scale * ||G||_F``.
    """
    a = np.array(g, dtype=np.float64, copy=True)
    d = a.shape[0]
    if a.ndim != 2 or a.shape[1] != d:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if d == 1:
        return a.reshape(1).copy()

    fro = float(np.sqrt((a * a).sum()))
    if fro == 0.0:
        return np.zeros(d)
    threshold = tol_scale * fro

    converged = False
    for _ in range(max_sweeps):
        if _max_offdiag(a) < threshold:
            converged = True
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) \
                    if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
    if not converged and _max_offdiag(a) >= threshold:
        raise JacobiConvergenceError(_max_offdiag(a), max_sweeps)

    return np.sort(np.diag(a))[::-1].copy()


def gram_eigenvalues(z: "Tensor | np.ndarray") -> np.ndarray:
    """Eigenvalues of Z^T Z for an [n, d] matrix, descending, clamped at 0."""
    arr = z.data if isinstance(z, Tensor) else np.asarray(z)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected an [n, d] matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("gram_eigenvalues: non-finite entries")
    zz = np.asarray(arr, dtype=np.float64)
    gram = zz.T @ zz
    return np.maximum(jacobi_eigenvalues(gram), 0.0)
