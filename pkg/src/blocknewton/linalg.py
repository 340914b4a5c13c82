"""Dense symmetric linear algebra: Jacobi eigensolver, eigenvalue clipping,
matrix-free conjugate gradient, and the vec-trick for Kronecker products.

Everything works on plain float64 numpy arrays.  Matrices stay small
(layer widths), so a cyclic Jacobi sweep is plenty; numpy's LAPACK
eigensolver is only used in the tests as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError, NumericalBreakdownError

_SYMMETRY_RTOL = 1e-12
_JACOBI_MAX_SWEEPS = 100


class EigenDecomposition(NamedTuple):
    """Eigenvalues ascending; eigenvectors as orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free symmetric operator v -> A v."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def from_matrix(cls, a: np.ndarray) -> "LinearOperator":
        a = np.asarray(a, dtype=float)
        return cls(dim=a.shape[0], apply=lambda v: a @ v)


def check_symmetric(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.linalg.norm(a)))
    if np.max(np.abs(a - a.T)) > _SYMMETRY_RTOL * scale * 10:
        raise DimensionError(f"{name} is not symmetric within tolerance")
    return a


def sym_eig(a: np.ndarray) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvector columns, so that a == Q @ diag(w) @ Q.T.
    """
    a = check_symmetric(a, "sym_eig input")
    n = a.shape[0]
    d = 0.5 * (a + a.T)  # exact symmetry before rotating
    q = np.eye(n)
    norm_a = np.linalg.norm(d)
    tol = _SYMMETRY_RTOL * max(norm_a, 1e-300)

    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.linalg.norm(d - np.diag(np.diag(d)))
        if off <= tol:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apq = d[p, r]
                if abs(apq) <= tol / max(n, 1):
                    continue
                # classic 2x2 rotation annihilating d[p, r]
                theta = (d[r, r] - d[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * d[:, p] - s * d[:, r]
                rot_r = s * d[:, p] + c * d[:, r]
                d[:, p], d[:, r] = rot_p, rot_r
                rot_p = c * d[p, :] - s * d[r, :]
                rot_r = s * d[p, :] + c * d[r, :]
                d[p, :], d[r, :] = rot_p, rot_r
                rot_p = c * q[:, p] - s * q[:, r]
                rot_r = s * q[:, p] + c * q[:, r]
                q[:, p], q[:, r] = rot_p, rot_r

    w = np.diag(d).copy()
    order = np.argsort(w, kind="stable")
    return EigenDecomposition(eigenvalues=w[order], eigenvectors=q[:, order])


def pos_eig(a: np.ndarray, gamma: float, tol_eig: float | None = None) -> np.ndarray:
    """Replace negative eigenvalues lam of a symmetric matrix by gamma*lam.

    Eigenvalues in [-tol_eig, 0) are clamped to zero instead of scaled so
    round-off negatives are not amplified.  gamma must be <= 0, which maps
    gamma=-1 to absolute values and gamma=0 to a projection onto PSD.
    """
    if gamma > 0:
        raise ConfigError(f"pos_eig gamma must be <= 0, got {gamma}")
    w, q = sym_eig(a)
    if tol_eig is None:
        tol_eig = _SYMMETRY_RTOL * max(1.0, float(np.max(np.abs(w))))
    elif tol_eig <= 0:
        raise ConfigError(f"pos_eig tol_eig must be > 0, got {tol_eig}")
    clipped = np.where(w < -tol_eig, gamma * w, np.where(w < 0, 0.0, w))
    out = (q * clipped) @ q.T
    return 0.5 * (out + out.T)


def abs_eig(a: np.ndarray) -> np.ndarray:
    """Flip negative eigenvalues to positive: Q |diag(w)| Q^T."""
    return pos_eig(a, gamma=-1.0)


def kron_apply(a: np.ndarray, c: np.ndarray, vec_b: np.ndarray) -> np.ndarray:
    """Apply (C^T kron A) to vec(B) as vec(A @ B @ C), column-major vec.

    a is m x m, c is n x n, vec_b stacks the columns of the m x n matrix B.
    The Kronecker product itself is never formed.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    vec_b = np.asarray(vec_b, dtype=float)
    m, n = a.shape[0], c.shape[0]
    if a.shape != (m, m) or c.shape != (n, n):
        raise DimensionError("kron_apply factors must be square")
    if vec_b.shape != (m * n,):
        raise DimensionError(
            f"kron_apply vector has length {vec_b.shape}, expected {m * n}"
        )
    b = vec_b.reshape((m, n), order="F")
    return (a @ b @ c).reshape(-1, order="F")


def cg_solve(
    op: LinearOperator,
    b: np.ndarray,
    max_iter: int,
    eps_cg: float,
) -> tuple[np.ndarray, int, float]:
    """Conjugate gradient for an SPD operator, zero initial guess.

    Stops when ||op(x) - b|| / max(1, ||b||) <= eps_cg or after max_iter
    iterations, returning the best iterate seen.  The residual is
    recomputed from scratch every 50 iterations to limit recurrence drift.
    Raises NumericalBreakdownError when NaNs appear (indefinite operator).
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (op.dim,):
        raise DimensionError(f"rhs has shape {b.shape}, operator dim {op.dim}")
    if not np.all(np.isfinite(b)):
        raise NumericalBreakdownError("cg_solve rhs is not finite")

    scale = max(1.0, float(np.linalg.norm(b)))
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    best_x, best_res = x.copy(), np.sqrt(rs) / scale
    iters = 0
    for k in range(1, max_iter + 1):
        ap = op.apply(p)
        denom = float(p @ ap)
        if not np.isfinite(denom):
            raise NumericalBreakdownError(f"cg_solve broke down at iteration {k}")
        if denom <= 0.0:
            # operator not positive definite along p; keep best iterate
            break
        alpha = rs / denom
        x = x + alpha * p
        if k % 50 == 0:
            r = b - op.apply(x)
        else:
            r = r - alpha * ap
        if not np.all(np.isfinite(r)):
            raise NumericalBreakdownError(f"cg_solve produced NaN at iteration {k}")
        rs_new = float(r @ r)
        iters = k
        res = np.sqrt(rs_new) / scale
        if res < best_res:
            best_res, best_x = res, x.copy()
        if res <= eps_cg:
            return x, iters, res
        p = r + (rs_new / rs) * p
        rs = rs_new
    return best_x, iters, best_res
