"""Index sets of residual covariances assumed nonzero.

All plug-in covariance estimators sum residual cross products only over a
known sparse index set.  Sets are represented as symmetric 0/1
``scipy.sparse`` matrices:

* ``cross`` (N x N): pairs ``(i, j)`` with ``E[e_it e_jt] != 0``; used for
  both the per-time set and the pooled cross-sectional set.
* ``time`` (T x T): pairs ``(t, u)`` with ``E[e_it e_iu] != 0``; used for both
  the per-series set and the pooled autocovariance set.
* ``joint`` (NT x NT): pairs ``((i, t), (j, u))``, flattened row-major as
  ``i * T + t``.

By default the sets are bands: ``|i - j| <= cross_lag`` and
``|t - u| <= time_lag``, and the joint set is their product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


def band_mask(n: int, lag: int) -> sp.csr_matrix:
    """Symmetric 0/1 band matrix with ones where ``|a - b| <= lag``."""
    lag = int(min(max(lag, 0), max(n - 1, 0)))
    offsets = list(range(-lag, lag + 1))
    diags = [np.ones(n - abs(k)) for k in offsets]
    return sp.diags(diags, offsets, shape=(n, n), format="csr")


def mask_from_pairs(n: int, pairs) -> sp.csr_matrix:
    """Symmetric 0/1 mask from ``(a, b)`` pairs; the diagonal is always included."""
    pairs = np.asarray(list(pairs), dtype=int).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise ValueError(f"pair index out of range for size {n}")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    m = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    m.data[:] = 1.0
    return m


def _validated(mask, n: int, max_per_row: int | None, name: str) -> sp.csr_matrix:
    m = sp.csr_matrix(mask, dtype=float)
    if m.shape != (n, n):
        raise ValueError(f"{name} set has shape {m.shape}, expected {(n, n)}")
    m = ((m + m.T + sp.identity(n, format="csr")) != 0).astype(float).tocsr()
    if max_per_row is not None:
        per_row = np.diff(m.indptr).max(initial=0)
        if per_row > max_per_row:
            raise ValueError(f"{name} set has {per_row} entries in a row, cap is {max_per_row}")
    return m


@dataclass(frozen=True)
class SparsitySets:
    """Known nonzero patterns of the residual covariance.

    Parameters
    ----------
    cross_lag, time_lag : int
        Band widths of the default cross-sectional and serial patterns.
    cross, time, joint : sparse matrix or None
        Explicit patterns overriding the bands.  They are symmetrized and
        given a full diagonal.
    max_per_row : int or None
        Cap on the members of any row, enforcing finitely many nonzeros.
    """

    cross_lag: int = 0
    time_lag: int = 0
    cross: object = None
    time: object = None
    joint: object = None
    max_per_row: int | None = None

    def __post_init__(self):
        if self.cross_lag < 0 or self.time_lag < 0:
            raise ValueError("lags must be nonnegative")

    @classmethod
    def diagonal(cls) -> "SparsitySets":
        return cls(0, 0)

    @classmethod
    def banded(cls, time_lag: int = 0, cross_lag: int = 0) -> "SparsitySets":
        return cls(cross_lag=cross_lag, time_lag=time_lag)

    @classmethod
    def from_pairs(cls, N: int, T: int, cross_pairs=(), time_pairs=(), joint_pairs=None,
                   max_per_row: int | None = None) -> "SparsitySets":
        """Explicit sets; joint pairs are ``((i, t), (j, u))`` tuples."""
        cross = mask_from_pairs(N, cross_pairs)
        time = mask_from_pairs(T, time_pairs)
        joint = None
        if joint_pairs is not None:
            flat = [(i * T + t, j * T + u) for (i, t), (j, u) in joint_pairs]
            joint = mask_from_pairs(N * T, flat)
        return cls(cross=cross, time=time, joint=joint, max_per_row=max_per_row)

    @classmethod
    def full(cls, N: int, T: int) -> "SparsitySets":
        """Every pair included; only sensible for tiny panels."""
        return cls(cross=sp.csr_matrix(np.ones((N, N))), time=sp.csr_matrix(np.ones((T, T))),
                   joint=sp.csr_matrix(np.ones((N * T, N * T))))

    # per-time cross-sectional set and pooled cross-sectional set
    def cross_mask(self, N: int) -> sp.csr_matrix:
        if self.cross is not None:
            return _validated(self.cross, N, self.max_per_row, "cross-sectional")
        return _validated(band_mask(N, self.cross_lag), N, self.max_per_row, "cross-sectional")

    # per-series serial set and pooled serial set
    def time_mask(self, T: int) -> sp.csr_matrix:
        if self.time is not None:
            return _validated(self.time, T, self.max_per_row, "serial")
        return _validated(band_mask(T, self.time_lag), T, self.max_per_row, "serial")

    def joint_mask(self, N: int, T: int) -> sp.csr_matrix:
        if self.joint is not None:
            return _validated(self.joint, N * T, None, "joint")
        return sp.kron(self.cross_mask(N), self.time_mask(T), format="csr")

    def is_diagonal(self) -> bool:
        return self.cross is None and self.time is None and self.joint is None \
            and self.cross_lag == 0 and self.time_lag == 0
