"""Dense symmetric eigendecomposition truncated to the leading pairs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotConverged, RepeatedEigenvalueWarning

GAP_TOL = 1e-10
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    repeated: bool = False


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the entry of largest magnitude in each is positive."""
    vectors = np.array(vectors, dtype=float, copy=True)
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def top_r_symmetric_eig(A: np.ndarray, r: int, check_symmetry: bool = True) -> EigenResult:
    """The ``r`` largest eigenpairs of a symmetric matrix, in descending order.

    Eigenvectors are orthonormal and sign-normalized with :func:`fix_signs`.
    A tie between the r-th and (r+1)-th eigenvalues emits
    :class:`RepeatedEigenvalueWarning` and sets ``repeated``; the
    invariant subspace is then not unique but the projection onto it is.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    m = A.shape[0]
    if not 1 <= r <= m:
        raise ValueError(f"r must lie in [1, {m}], got {r}")
    scale = np.abs(A).max() if A.size else 0.0
    if check_symmetry and np.abs(A - A.T).max() > SYMMETRY_TOL * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    try:
        vals, vecs = scipy.linalg.eigh(A, subset_by_index=[m - r - (r < m), m - 1])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NotConverged(str(exc)) from exc
    vals = vals[::-1]
    vecs = vecs[:, ::-1]

    repeated = False
    lam1 = abs(vals[0]) if vals.size else 0.0
    if r < m:
        repeated = vals[r - 1] - vals[r] < GAP_TOL * max(lam1, np.finfo(float).tiny)
    if r > 1 and not repeated:
        repeated = bool(np.any(np.diff(vals[:r]) > -GAP_TOL * lam1))
    if repeated:
        warnings.warn(
            "leading eigenvalues are repeated; eigenvectors are not identified",
            RepeatedEigenvalueWarning,
            stacklevel=2,
        )
    return EigenResult(vals[:r].copy(), fix_signs(vecs[:, :r]), bool(repeated))
