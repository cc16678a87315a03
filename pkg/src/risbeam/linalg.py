"""Small complex linear-algebra layer used by the rest of the package.

Everything is float64/complex128; inputs must be 2-D (vectors go in as
explicit row or column matrices).
"""

import numpy as np

from .errors import ShapeMismatchError, SingularMatrixError

# Gram-matrix condition estimate above which right_pinv refuses to invert.
COND_LIMIT = 1e12


def as_matrix(a):
    """Coerce to a 2-D complex128 ndarray."""
    out = np.asarray(a, dtype=np.complex128)
    if out.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D array, got shape {out.shape}")
    return out


def hermitian(a):
    """Conjugate transpose."""
    return as_matrix(a).conj().T


def matmul(a, b):
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a):
    """Square root of the summed squared entry magnitudes."""
    return float(np.linalg.norm(as_matrix(a)))


def right_pinv(a):
    """Right pseudo-inverse A^H (A A^H)^-1 of a full-row-rank matrix.

    The Gram matrix A A^H is Hermitian positive definite when A has full
    row rank, so it is inverted through its Cholesky factor. A condition
    estimate (eigenvalue ratio) above COND_LIMIT, a non-positive
    eigenvalue, or a failed factorization raises SingularMatrixError
    instead of returning garbage.
    """
    a = as_matrix(a)
    rows, cols = a.shape
    if rows > cols:
        raise ShapeMismatchError(f"need rows <= cols for a right inverse, got {a.shape}")
    gram = a @ a.conj().T
    try:
        eigs = np.linalg.eigvalsh(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"Gram matrix eigenvalues unavailable: {exc}") from exc
    if not np.all(np.isfinite(eigs)) or eigs[0] <= 0.0 or eigs[-1] > COND_LIMIT * eigs[0]:
        raise SingularMatrixError("Gram matrix condition estimate exceeds COND_LIMIT")
    try:
        lower = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"Gram matrix not positive definite: {exc}") from exc
    eye = np.eye(rows, dtype=np.complex128)
    gram_inv = np.linalg.solve(lower.conj().T, np.linalg.solve(lower, eye))
    return a.conj().T @ gram_inv
