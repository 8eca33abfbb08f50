"""Kernel-projected principal components at a target state.

For a target state ``s`` the panel is reweighted in time,
``X^s = X diag(w)^{1/2}`` with ``w_t = K_s(S_t)``, and the leading ``r``
eigenvectors of ``(X^s)' X^s / (N T(s))`` give the projected factors.
Loadings are the regression of ``X^s`` on those factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EffectiveSampleTooSmall, SingularEigenvalue, SVFactorError
from .kernels import DEFAULT_MIN_EFFECTIVE_SIZE, KernelWeights, kernel_weights
from .linalg import EigenResult, fix_signs, top_r_symmetric_eig

#: relative weight floor below which unprojected factors are masked
WEIGHT_FLOOR_REL = 1e-8


@dataclass(frozen=True)
class ConditionalFit:
    """Conditional factor model fitted at one state value.

    Attributes
    ----------
    projected_factors : ndarray, shape (T, r)
        ``F^s`` normalized so that ``F^s' F^s / T(s) = I``.
    loadings : ndarray, shape (N, r)
        ``Lambda(s) = X^s F^s / T(s)``.
    eigenvalues : ndarray, shape (r,)
        Leading eigenvalues ``V_r`` of ``(X^s)' X^s / (N T(s))``.
    """

    s: float
    h: float
    r: int
    weights: KernelWeights
    projected_factors: np.ndarray
    loadings: np.ndarray
    eigenvalues: np.ndarray
    X: np.ndarray = field(repr=False)
    total_variation: float = np.nan
    repeated_eigenvalues: bool = False

    @property
    def effective_size(self) -> float:
        return self.weights.effective_size

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.weights.values)

    @property
    def projected_data(self) -> np.ndarray:
        return self.X * self.sqrt_weights

    @property
    def variance_shares(self) -> np.ndarray:
        """Share of ``trace((X^s)' X^s / (N T(s)))`` carried by each factor."""
        return self.eigenvalues / self.total_variation

    def flip(self, signs) -> "ConditionalFit":
        """Same fit with factor columns multiplied by ``signs`` (+1/-1)."""
        signs = np.asarray(signs, dtype=float)
        return ConditionalFit(
            self.s, self.h, self.r, self.weights,
            self.projected_factors * signs, self.loadings * signs,
            self.eigenvalues, self.X, self.total_variation, self.repeated_eigenvalues,
        )


@dataclass(frozen=True)
class NormalizedFit:
    """Loading-normalized version of a fit: ``Lbar' Lbar / N = I``."""

    fit: ConditionalFit
    loadings_bar: np.ndarray
    factors_bar: np.ndarray

    @property
    def residuals_projected(self) -> np.ndarray:
        return self.fit.projected_data - self.loadings_bar @ self.factors_bar.T


@dataclass(frozen=True)
class CommonComponentResult:
    common: np.ndarray
    residuals_projected: np.ndarray
    residuals: np.ndarray
    valid_times: np.ndarray
    factors: np.ndarray


def _weights_for(S, s, h, kind, min_effective_size) -> KernelWeights:
    return kernel_weights(kind, S, s, h, min_effective_size=min_effective_size)


def fit_conditional(
    X,
    S,
    s: float,
    h: float,
    r: int,
    kind: str = "gaussian",
    *,
    demean: bool = False,
    min_effective_size: float | None = DEFAULT_MIN_EFFECTIVE_SIZE,
    side: str = "auto",
    weights: KernelWeights | None = None,
) -> ConditionalFit:
    """Fit the conditional factor model at state ``s``.

    Parameters
    ----------
    X : array_like, shape (N, T)
        Panel, one row per series.
    S : array_like, shape (T,)
        Observed state path.
    s, h : float
        Target state and bandwidth.
    r : int
        Number of factors.
    kind : str
        Kernel name.
    demean : bool
        Subtract each series' time mean before fitting. Off by default, the
        model is fitted on second moments.
    side : {"auto", "time", "cross"}
        Which Gram matrix to eigendecompose: the T x T ``"time"`` matrix,
        the N x N ``"cross"`` matrix, or the smaller of the two.
    weights : KernelWeights, optional
        Precomputed weights; ``S``, ``s``, ``h`` and ``kind`` are then only
        used for bookkeeping.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d (N, T) array")
    N, T = X.shape
    if not 1 <= r <= min(N, T):
        raise ValueError(f"r={r} must lie in [1, min(N, T)={min(N, T)}]")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if demean:
        X = X - X.mean(axis=1, keepdims=True)
    if weights is None:
        weights = _weights_for(S, s, h, kind, min_effective_size)
    if len(weights) != T:
        raise ValueError(f"state path has length {len(weights)}, panel has T={T}")
    Ts = weights.effective_size
    if Ts <= 0:
        raise EffectiveSampleTooSmall(float(s), Ts, 0.0)

    sw = np.sqrt(weights.values)
    Xs = X * sw
    total = float(np.einsum("ij,ij->", Xs, Xs)) / (N * Ts)

    if side == "auto":
        side = "time" if T <= N else "cross"
    if side == "time":
        eig = top_r_symmetric_eig(Xs.T @ Xs / (N * Ts), r, check_symmetry=False)
        F = np.sqrt(Ts) * eig.eigenvectors
    elif side == "cross":
        eig = top_r_symmetric_eig(Xs @ Xs.T / (N * Ts), r, check_symmetry=False)
        vals = eig.eigenvalues
        if np.any(vals <= 0):
            raise SingularEigenvalue(f"non-positive eigenvalue {vals.min():.3g} at s={s}")
        F = fix_signs(Xs.T @ eig.eigenvectors / np.sqrt(vals * N))
    else:
        raise ValueError(f"side must be 'auto', 'time' or 'cross', got {side!r}")

    L = Xs @ F / Ts
    return ConditionalFit(
        s=float(s), h=float(h), r=int(r), weights=weights,
        projected_factors=F, loadings=L, eigenvalues=eig.eigenvalues,
        X=X, total_variation=total, repeated_eigenvalues=eig.repeated,
    )


def default_floor(fit: ConditionalFit) -> float:
    return WEIGHT_FLOOR_REL * float(fit.weights.values.max())


def unprojected_factors(fit: ConditionalFit, floor: float | None = None):
    """Factors ``F_t = F^s_t / sqrt(K_s(S_t))`` on times with weight above ``floor``.

    Returns
    -------
    factors : ndarray, shape (T, r)
        NaN on masked rows.
    valid : ndarray of bool, shape (T,)
    """
    if floor is None:
        floor = default_floor(fit)
    w = fit.weights.values
    valid = w >= floor
    out = np.full_like(fit.projected_factors, np.nan)
    out[valid] = fit.projected_factors[valid] / np.sqrt(w[valid])[:, None]
    return out, valid


def common_components(fit: ConditionalFit, floor: float | None = None) -> CommonComponentResult:
    F, valid = unprojected_factors(fit, floor)
    L = fit.loadings
    common = L @ F.T
    resid_proj = fit.projected_data - L @ fit.projected_factors.T
    resid = fit.X - common
    return CommonComponentResult(
        common=common,
        residuals_projected=resid_proj,
        residuals=resid,
        valid_times=np.flatnonzero(valid),
        factors=F,
    )


def normalize_fit(fit: ConditionalFit) -> NormalizedFit:
    V = fit.eigenvalues
    if np.any(V <= 0):
        raise SingularEigenvalue(f"non-positive eigenvalue {V.min():.3g} at s={fit.s}")
    root = np.sqrt(V)
    return NormalizedFit(fit, fit.loadings / root, fit.projected_factors * root)


@dataclass
class SweepPoint:
    s: float
    fit: ConditionalFit | None
    variance_shares: np.ndarray | None
    error: SVFactorError | None = None

    @property
    def ok(self) -> bool:
        return self.fit is not None


def state_sweep(
    X, S, grid: Sequence[float], h: float, r: int, kind: str = "gaussian", **fit_kwargs
) -> list[SweepPoint]:
    """Fit the model at every grid state; failures are recorded, not raised."""
    X = np.asarray(X, dtype=float)
    out = []
    for s in np.asarray(grid, dtype=float):
        try:
            fit = fit_conditional(X, S, s, h, r, kind, **fit_kwargs)
        except EffectiveSampleTooSmall as exc:
            out.append(SweepPoint(float(s), None, None, exc))
            continue
        out.append(SweepPoint(float(s), fit, fit.variance_shares))
    return out


def align_signs(estimate: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Flip estimate columns to have nonnegative inner product with reference."""
    signs = np.sign(np.einsum("ij,ij->j", estimate, reference))
    signs[signs == 0] = 1.0
    return estimate * signs
