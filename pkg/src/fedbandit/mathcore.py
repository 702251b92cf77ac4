"""Small dense linear algebra used by the controller and the agents.

Everything here works on plain ``numpy.ndarray`` values. Matrices are
d x d with d <= 64; no attempt is made to exploit sparsity.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite, SymmetryError

SYM_TOL = 1e-9


def as_vector(x, d: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise ValueError(f"expected length {d}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def is_symmetric(A: np.ndarray, tol: float = SYM_TOL) -> bool:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    return bool(np.all(np.abs(A - A.T) <= tol))


def as_symmatrix(A, d: int | None = None) -> np.ndarray:
    """Validate ``A`` as a finite symmetric matrix and return it as floats.

    Matrices that fail the symmetry tolerance are rejected, never repaired;
    call :func:`symmetrize` explicitly where repair is intended.
    """
    M = np.asarray(A, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if d is not None and M.shape[0] != d:
        raise ValueError(f"expected {d}x{d}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if not is_symmetric(M):
        raise SymmetryError("matrix is not symmetric within tolerance")
    return M


def symmetrize(A) -> np.ndarray:
    """Return ``(A + A.T) / 2``; the result is exactly symmetric."""
    M = np.asarray(A, dtype=float)
    return (M + M.T) / 2.0


def min_eigenvalue(A) -> float:
    return float(np.linalg.eigvalsh(np.asarray(A, dtype=float))[0])


class SPDFactor:
    """Cholesky factor of a symmetric positive-definite matrix.

    One factor is built per broadcast and reused for every action scored
    during the episode.
    """

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        self.A = A
        self.d = A.shape[0]
        try:
            self.chol = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("matrix is not positive definite") from exc
        if np.any(np.diag(self.chol) <= 0.0):
            raise NotPositiveDefinite("non-positive pivot in Cholesky factor")

    def solve(self, b) -> np.ndarray:
        y = solve_triangular(self.chol, np.asarray(b, dtype=float), lower=True)
        return solve_triangular(self.chol.T, y, lower=False)

    def inv_norm(self, x) -> np.ndarray | float:
        """sqrt(x^T A^{-1} x) for a vector, or row-wise for an (m, d) array."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            y = solve_triangular(self.chol, x, lower=True)
            return float(np.sqrt(y @ y))
        y = solve_triangular(self.chol, x.T, lower=True)
        return np.sqrt(np.einsum("ij,ij->j", y, y))


def spd_solve(A, b) -> np.ndarray:
    return SPDFactor(A).solve(b)


def inv_norm(A, x) -> float:
    return SPDFactor(A).inv_norm(np.asarray(x, dtype=float).reshape(-1))
