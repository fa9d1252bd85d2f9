"""Dense linear-algebra kernels.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and rank 2.
:func:`as_matrix` is the single validation gate: it rejects empty, ragged
or non-finite input. Every other function here is pure.
"""

from __future__ import annotations

import io
from typing import NamedTuple

import numpy as np
from scipy.linalg import lapack

from ._jacobi import jacobi_sweeps
from .errors import (
    DegenerateInputError,
    DimensionError,
    DomainError,
    ParameterError,
    ShapeError,
)

#: above this order ``sym_eig(method="auto")`` hands off to LAPACK
JACOBI_MAX_ORDER = 64
JACOBI_MAX_SWEEPS = 100
JACOBI_REL_TOL = 1e-12
SYMMETRY_REL_TOL = 1e-8
DEFAULT_EIG_FLOOR = 1e-6

NORMALIZE_MODES = ("dim_variance", "row_unit", "frobenius_sqrtD", "trace_cov")


class SymEigDecomposition(NamedTuple):
    """Eigenvalues sorted non-increasingly and matching orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite, non-empty 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionError(f"{name} is empty (shape {m.shape})")
    if not np.all(np.isfinite(m)):
        raise DimensionError(f"{name} contains NaN or Inf")
    return m


def center_columns(Z) -> np.ndarray:
    Z = as_matrix(Z)
    return Z - Z.mean(axis=0)


def covariance(Zc) -> np.ndarray:
    """(1/N) ZcᵀZc for an already centered ``Zc``."""
    Zc = as_matrix(Zc)
    return (Zc.T @ Zc) / Zc.shape[0]


def gram(Z) -> np.ndarray:
    Z = as_matrix(Z)
    return Z @ Z.T


def frobenius_norm(A) -> float:
    # element sum, O(mn); never through singular values
    a = np.asarray(A, dtype=np.float64).ravel()
    return float(np.sqrt(np.dot(a, a)))


def frobenius_norm_sq(A) -> float:
    a = np.asarray(A, dtype=np.float64).ravel()
    return float(np.dot(a, a))


def singular_values(A) -> np.ndarray:
    return np.linalg.svd(as_matrix(A), compute_uv=False)


def ky_fan_norm(A, p: float) -> float:
    """Ky Fan p-norm ``(sum_k sigma_k**p) ** (1/p)``."""
    if not p >= 1:
        raise ParameterError(f"Ky Fan norm needs p >= 1, got {p}")
    s = singular_values(A)
    if p == 1:
        return float(s.sum())
    return float(np.sum(s**p) ** (1.0 / p))


def _check_symmetric(A: np.ndarray) -> None:
    if A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    scale = frobenius_norm(A)
    if scale > 0 and frobenius_norm(A - A.T) > SYMMETRY_REL_TOL * scale:
        raise ShapeError("matrix is not symmetric within relative 1e-8")


def _canonical(w: np.ndarray, v: np.ndarray) -> SymEigDecomposition:
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    # sign: largest-magnitude component of each eigenvector is positive
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return SymEigDecomposition(w, np.ascontiguousarray(v * signs))


def sym_eig(A, method: str = "auto") -> SymEigDecomposition:
    """Eigendecomposition of a real symmetric matrix.

    ``method`` is ``"jacobi"`` (cyclic Jacobi, convergence at off-diagonal
    norm <= 1e-12 * ||A||_F, at most 100 sweeps), ``"lapack"`` (``dsyevd``
    through numpy) or ``"auto"``, which picks Jacobi up to order 64.
    Output is deterministic: eigenvalues non-increasing (stable order) and
    each eigenvector's largest-magnitude entry positive.
    """
    A = as_matrix(A)
    _check_symmetric(A)
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_ORDER else "lapack"
    if method == "jacobi":
        tol = JACOBI_REL_TOL * frobenius_norm(A)
        w, v, _, _ = jacobi_sweeps(A.copy(), tol, JACOBI_MAX_SWEEPS)
    elif method == "lapack":
        w, v = np.linalg.eigh(A)
    else:
        raise ParameterError(f"unknown eigensolver {method!r}")
    return _canonical(w, v)


def sym_eigvals(A, method: str = "auto") -> np.ndarray:
    """Eigenvalues only, non-increasing. Skips eigenvector work on the LAPACK path."""
    A = as_matrix(A)
    _check_symmetric(A)
    A = 0.5 * (A + A.T)
    if method == "auto":
        method = "jacobi" if A.shape[0] <= JACOBI_MAX_ORDER else "lapack"
    if method == "lapack":
        return np.linalg.eigvalsh(A)[::-1].copy()
    return sym_eig(A, method=method).eigenvalues


def sym_apply(A, fn, method: str = "auto") -> np.ndarray:
    """Spectral function ``Q diag(fn(lambda)) Qᵀ`` of a symmetric matrix."""
    dec = sym_eig(A, method=method)
    q = dec.eigenvectors
    return (q * fn(dec.eigenvalues)) @ q.T


def cholesky_lower(A) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`DomainError` with the failing pivot."""
    A = as_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise DomainError(
            f"matrix is not positive definite (pivot {info - 1} failed)",
            pivot=info - 1,
        )
    if info < 0:
        raise DomainError(f"dpotrf rejected argument {-info}")
    return c


def logdet_psd(A, eps: float = 0.0) -> float:
    """log det(A + eps I) via Cholesky."""
    if eps < 0:
        raise ParameterError(f"eps must be >= 0, got {eps}")
    A = as_matrix(A)
    shifted = A + eps * np.eye(A.shape[0]) if eps else A
    L = cholesky_lower(shifted)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def normalize(Z, mode: str) -> np.ndarray:
    """Rescale ``Z`` so that one statistic becomes fixed.

    ``dim_variance``: every column has population std 1.
    ``row_unit``: every row has Euclidean norm 1.
    ``frobenius_sqrtD``: ``||Z||_F == sqrt(D)`` with D the column count.
    ``trace_cov``: ``Z`` is a covariance and is divided by its trace.
    """
    Z = as_matrix(Z)
    if mode == "dim_variance":
        std = Z.std(axis=0)
        bad = np.flatnonzero(std == 0)
        if bad.size:
            raise DegenerateInputError(
                f"column {bad[0]} has zero variance", axis="column", index=int(bad[0])
            )
        return Z / std
    if mode == "row_unit":
        norms = np.sqrt(np.einsum("ij,ij->i", Z, Z))
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise DegenerateInputError(
                f"row {bad[0]} has zero norm", axis="row", index=int(bad[0])
            )
        return Z / norms[:, None]
    if mode == "frobenius_sqrtD":
        fro = frobenius_norm(Z)
        if fro == 0:
            raise DegenerateInputError("matrix has zero Frobenius norm", axis="matrix")
        return Z * (np.sqrt(Z.shape[1]) / fro)
    if mode == "trace_cov":
        if Z.shape[0] != Z.shape[1]:
            raise ShapeError("trace_cov expects a square covariance")
        tr = float(np.trace(Z))
        if tr == 0:
            raise DegenerateInputError("covariance has zero trace", axis="matrix")
        return Z / tr
    raise ParameterError(f"unknown normalization {mode!r}; expected one of {NORMALIZE_MODES}")


def whitening_matrix(Sigma, eps: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Symmetric inverse square root with eigenvalues floored at ``eps``."""
    return sym_apply(Sigma, lambda lam: np.maximum(lam, eps) ** -0.5)


def whiten(Z, eps: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """ZCA-whiten the rows of ``Z``: center, then multiply by Σ^{-1/2}."""
    Z = as_matrix(Z)
    if Z.shape[0] < 2:
        raise DimensionError("whitening needs at least two rows")
    Zc = center_columns(Z)
    return Zc @ whitening_matrix(covariance(Zc), eps)


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def write_csv(A, dest) -> None:
    """Headerless CSV, one row per line, 17 significant digits."""
    A = as_matrix(A)
    lines = [",".join(format(x, ".17g") for x in row) for row in A]
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def read_csv(src) -> np.ndarray:
    if hasattr(src, "read"):
        text = src.read()
    else:
        with open(src, encoding="utf-8") as fh:
            text = fh.read()
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise DimensionError("CSV holds no rows")
    data = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", dtype=np.float64, ndmin=2)
    return as_matrix(data)
