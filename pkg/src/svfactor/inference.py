"""Feasible standard errors and the generalized correlation test.

Standard errors for factors, loadings and common components are sparse
plug-in estimators that sum residual cross products over the sets in
:class:`~svfactor.sparsity.SparsitySets`.

The generalized correlation ``rho`` of two loading matrices is the sum of
squared canonical correlations between their column spans.  It equals the
number of factors exactly when the spans coincide, which makes it a
rotation-invariant statistic for "did the loading space change between two
states".  :func:`gc_test` standardizes ``rho_hat - r`` after subtracting an
estimate of its leading (negative) bias.

Every ``vec`` in this module stacks columns (Fortran order).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .errors import (
    DimensionMismatch,
    EffectiveSampleTooSmall,
    NumericalWarning,
    RankDeficient,
    SingularEigenvalue,
    SingularLoadingGram,
    SVFactorError,
    ZeroVariance,
)
from .estimator import (
    ConditionalFit,
    NormalizedFit,
    common_components,
    fit_conditional,
    normalize_fit,
    unprojected_factors,
)
from .sparsity import SparsitySets

COND_LIMIT = 1e12
PSD_TOL = 1e-10
#: ratio of the null variance of a centered quadratic form to its gradient plug-in
NULL_VARIANCE_FACTOR = 0.5


def vec(A: np.ndarray) -> np.ndarray:
    return np.asarray(A).reshape(-1, order="F")


def commutation_matrix(m: int, n: int) -> np.ndarray:
    """``K`` with ``K vec(A) = vec(A.T)`` for ``A`` of shape (m, n)."""
    K = np.zeros((m * n, m * n))
    idx = np.arange(m * n).reshape(m, n, order="F")
    K[np.arange(m * n), vec(idx.T)] = 1.0
    return K


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _inv_eigs(fit: ConditionalFit) -> np.ndarray:
    V = fit.eigenvalues
    if np.any(V <= 0):
        raise SingularEigenvalue(f"non-positive eigenvalue {V.min():.3g} at s={fit.s}")
    return 1.0 / V


# ---------------------------------------------------------------------------
# plug-in covariances for factors, loadings, common components


@dataclass(frozen=True)
class FactorCov:
    pi_hat: np.ndarray
    t: int


@dataclass(frozen=True)
class LoadingCov:
    theta_hat: np.ndarray
    i: int


@dataclass(frozen=True)
class CommonSE:
    v_hat: float
    w_hat: float
    se: float


def _cross_moment(L: np.ndarray, resid: np.ndarray, mask: sp.spmatrix) -> np.ndarray:
    """``sum_{(i,j) in mask} L_i L_j' e_it e_jt`` for every column t.

    ``L`` is (N, r), ``resid`` is (N, T'); returns (T', r, r).
    """
    A = L[:, None, :] * resid[:, :, None]  # (N, T', r)
    N, Tn, r = A.shape
    MA = (mask @ A.reshape(N, Tn * r)).reshape(N, Tn, r)
    return np.einsum("itk,itl->tkl", A, MA)


def factor_cov_all(fit: ConditionalFit, residuals: np.ndarray, times, sets: SparsitySets) -> np.ndarray:
    """Plug-in ``Pi_t`` for several times at once, shape (len(times), r, r)."""
    inv_v = _inv_eigs(fit)
    times = np.atleast_1d(np.asarray(times, dtype=int))
    E = np.asarray(residuals)[:, times]
    mid = _cross_moment(fit.loadings, E, sets.cross_mask(fit.N)) / fit.N
    return _sym(inv_v[None, :, None] * mid * inv_v[None, None, :])


def estimate_factor_cov(fit: ConditionalFit, residuals: np.ndarray, t: int, sets: SparsitySets) -> FactorCov:
    """Plug-in asymptotic covariance of the unprojected factor at time ``t``.

    ``V^-1 [ (1/N) sum_{(i,j)} L_i L_j' e_it e_jt ] V^-1`` with unprojected
    residuals ``e = X - C_hat``.  The estimate approximates the covariance
    of ``sqrt(N) (F_t - H' F_t^0)``.
    """
    return FactorCov(factor_cov_all(fit, residuals, [t], sets)[0], int(t))


def loading_cov_all(fit: ConditionalFit, residuals_projected: np.ndarray, sets: SparsitySets,
                    series=None) -> np.ndarray:
    """Plug-in ``Theta_i`` for all (or selected) series, shape (n, r, r)."""
    E = np.asarray(residuals_projected)
    if series is not None:
        E = E[np.atleast_1d(series)]
    F = fit.projected_factors
    T, r = F.shape
    n = E.shape[0]
    B = F[None, :, :] * E[:, :, None]  # (n, T, r)
    M = sets.time_mask(T)
    MB = (M @ B.transpose(1, 0, 2).reshape(T, n * r)).reshape(T, n, r)
    raw = np.einsum("itk,til->ikl", B, MB)
    scale = T * fit.h / fit.effective_size**2
    return _sym(scale * raw)


def estimate_loading_cov(fit: ConditionalFit, residuals_projected: np.ndarray, i: int,
                         sets: SparsitySets) -> LoadingCov:
    """``Th / T(s)^2 * sum_{(t,u)} F_t F_u' e^s_it e^s_iu`` for series ``i``.

    Approximates the covariance of ``sqrt(Th) (L_i - H^-1 L_i^0)``.
    """
    return LoadingCov(loading_cov_all(fit, residuals_projected, sets, series=[i])[0], int(i))


def _loading_gram_inv(fit: ConditionalFit) -> np.ndarray:
    G = fit.loadings.T @ fit.loadings / fit.N
    if np.linalg.cond(G) > COND_LIMIT:
        raise SingularLoadingGram("loading Gram matrix is numerically singular")
    return np.linalg.inv(G)


def common_se_grid(fit: ConditionalFit, sets: SparsitySets, times=None, floor: float | None = None):
    """Variance pieces of the common component for every series at ``times``.

    Returns ``(v_hat, w_hat, se)``, each of shape (N, len(times)).
    """
    cc = common_components(fit, floor)
    if times is None:
        times = cc.valid_times
    times = np.atleast_1d(np.asarray(times, dtype=int))
    Ginv = _loading_gram_inv(fit)
    L = fit.loadings
    mid = _cross_moment(L, cc.residuals[:, times], sets.cross_mask(fit.N)) / fit.N
    mid = _sym(mid)
    GL = L @ Ginv  # rows G^-1 L_i
    v_hat = np.einsum("ik,tkl,il->it", GL, mid, GL)
    theta = loading_cov_all(fit, cc.residuals_projected, sets)
    Ft = cc.factors[times]
    w_hat = np.einsum("tk,ikl,tl->it", Ft, theta, Ft)
    se = np.sqrt(np.maximum(v_hat / fit.N + w_hat / (fit.T * fit.h), 0.0))
    return v_hat, w_hat, se


def estimate_common_se(fit: ConditionalFit, residuals, i: int, t: int, sets: SparsitySets) -> CommonSE:
    """Standard error of ``C_hat_it``: ``sqrt(V_it / N + W_it / (T h))``.

    ``residuals`` are the unprojected residuals of :func:`common_components`;
    the projected ones are recomputed from the fit.
    """
    residuals = np.asarray(residuals)
    Ginv = _loading_gram_inv(fit)
    L = fit.loadings
    mid = _sym(_cross_moment(L, residuals[:, [t]], sets.cross_mask(fit.N))[0] / fit.N)
    gl = Ginv @ L[i]
    v_hat = float(gl @ mid @ gl)
    resid_proj = fit.projected_data - L @ fit.projected_factors.T
    theta = loading_cov_all(fit, resid_proj, sets, series=[i])[0]
    F, valid = unprojected_factors(fit)
    if not valid[t]:
        raise ValueError(f"time {t} has kernel weight below the floor")
    w_hat = float(F[t] @ theta @ F[t])
    se = float(np.sqrt(max(v_hat / fit.N + w_hat / (fit.T * fit.h), 0.0)))
    return CommonSE(v_hat, w_hat, se)


# ---------------------------------------------------------------------------
# generalized correlation


def _gram(A: np.ndarray, B: np.ndarray, N: int) -> np.ndarray:
    return A.T @ B / N


def _checked_inv(G: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(G)) or np.linalg.cond(G) > COND_LIMIT:
        raise RankDeficient(f"{what} is not of full column rank")
    return np.linalg.inv(G)


def generalized_correlation(L1, L2) -> float:
    """``tr[(L1'L1)^-1 (L1'L2) (L2'L2)^-1 (L2'L1)]`` (scale free in N).

    Equals the number of columns when the spans coincide and 0 when they are
    orthogonal; never exceeds ``min(r1, r2)``.
    """
    L1 = np.asarray(L1, dtype=float)
    L2 = np.asarray(L2, dtype=float)
    if L1.ndim == 1:
        L1 = L1[:, None]
    if L2.ndim == 1:
        L2 = L2[:, None]
    if L1.shape[0] != L2.shape[0]:
        raise DimensionMismatch(f"loadings have {L1.shape[0]} and {L2.shape[0]} rows")
    N = L1.shape[0]
    G1 = _checked_inv(_gram(L1, L1, N), "first loading matrix")
    G4 = _checked_inv(_gram(L2, L2, N), "second loading matrix")
    G2 = _gram(L1, L2, N)
    return float(np.trace(G1 @ G2 @ G4 @ G2.T))


@dataclass(frozen=True)
class GcTestResult:
    s1: float
    s2: float
    rho_hat: float
    r: int
    bias: float
    variance: float
    statistic: float
    p_value: float
    details: dict = field(default_factory=dict, repr=False, compare=False)


@dataclass(frozen=True)
class _State:
    L: np.ndarray  # normalized loadings (N, r)
    F: np.ndarray  # normalized projected factors (T, r)
    E: np.ndarray  # projected residuals (N, T)
    inv_v: np.ndarray
    Ts: float


def _state(nfit: NormalizedFit) -> _State:
    return _State(nfit.loadings_bar, nfit.factors_bar, nfit.residuals_projected,
                  _inv_eigs(nfit.fit), nfit.fit.effective_size)


def _masked_outer(A: np.ndarray, B: np.ndarray, mask: sp.spmatrix) -> sp.csr_matrix:
    """Sparse ``mask * (A' B)`` computed only on the mask's support."""
    coo = mask.tocoo()
    vals = np.einsum("ik,ik->k", A[:, coo.row], B[:, coo.col])
    return sp.csr_matrix((vals, (coo.row, coo.col)), shape=mask.shape)


def gc_bias_terms(st: Sequence[_State], sets: SparsitySets, N: int, T: int):
    """The blocks ``x_{l,l'} + y_{l,l'}`` for (l, l') in (1,1), (1,2), (2,1), (2,2).

    ``x_{l,l'} = x_{l,l',l,l'} + x_{l,l,l,l'} + x_{l',l',l,l'}``: the last term
    pairs the serial residual moment of state ``l'`` with ``P_{l,l'}`` so that
    every piece of block (l, l') scales with the signs of both loading
    matrices, like the gradient it is paired with.
    """
    mT = sets.time_mask(T)
    mN = sets.cross_mask(N)
    P = {(a, b): _gram(st[a].L, st[b].L, N) for a in range(2) for b in range(2)}
    inner = {}
    for u in range(2):
        for v in range(2):
            S = _masked_outer(st[u].E, st[v].E, mT)
            inner[u, v] = st[u].F.T @ (S @ st[v].F) / (N * st[u].Ts * st[v].Ts)

    def x(u, v, p, w):
        return (st[p].inv_v[:, None] * P[p, u]) @ inner[u, v] @ (P[v, w] * st[w].inv_v[None, :])

    zcache = {}

    def z(p, w):
        if (p, w) not in zcache:
            S = _masked_outer(st[p].E.T, st[p].E.T, mN)
            zcache[p, w] = st[p].inv_v[:, None] * (st[p].L.T @ (S @ st[w].L)) / (N**2 * st[p].Ts)
        return zcache[p, w]

    blocks = []
    for l, lp in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xb = x(l, lp, l, lp) + x(l, l, l, lp) + x(lp, lp, l, lp)
        yb = z(l, lp) + z(lp, l)
        blocks.append(xb + yb)
    return blocks


def gc_xi(G1, G2, G3, G4) -> np.ndarray:
    """Derivative blocks of ``tr(G1^-1 G2 G4^-1 G3)``, vec-stacked.

    The cross blocks are laid out as ``G1^-1 G2 G4^-1`` and ``G4^-1 G3 G1^-1``,
    each the transposed gradient of the other cross block.  Because
    ``G3 = G2'`` this gives the same directional derivative as the plain
    gradient for every perturbation that keeps that structure.
    """
    G1i = _checked_inv(G1, "first loading Gram")
    G4i = _checked_inv(G4, "second loading Gram")
    return np.concatenate([
        vec(-(G1i @ G2 @ G4i @ G3 @ G1i).T),
        vec(G1i @ G2 @ G4i),
        vec(G4i @ G3 @ G1i),
        vec(-(G4i @ G3 @ G1i @ G2 @ G4i).T),
    ])


def gc_D(st: Sequence[_State], N: int) -> np.ndarray:
    """Jacobian of the four loading Grams with respect to ``B = [vec mu_ll']``.

    For each block (l, l') the first-order term is
    ``M1 mu_{l,l'} M2 + M3 mu_{l,l}' M4 + M5 mu_{l',l}' M6 + M7 mu_{l',l'} M8``
    with the plug-ins ``M1 = V_l^-1 P_ll``, ``M2 = M5 = I``, ``M3 = V_l^-1``,
    ``M4 = M7 = P_ll'``, ``M6 = P_l'l' V_l'^-1``, ``M8 = V_l'^-1``, where
    ``P_ab = Lbar_a' Lbar_b / N``.  ``M6`` keeps the inverse eigenvalues of
    its population counterpart; without them the first-order terms of the
    statistic do not cancel under the null.
    """
    r = st[0].L.shape[1]
    I = np.eye(r)
    K = commutation_matrix(r, r)
    P = {(a, b): _gram(st[a].L, st[b].L, N) for a in range(2) for b in range(2)}
    index = {(0, 0): 0, (0, 1): 1, (1, 0): 2, (1, 1): 3}
    D = np.zeros((4 * r * r, 4 * r * r))
    for (l, lp), row in index.items():
        Vl = np.diag(st[l].inv_v)
        Vlp = np.diag(st[lp].inv_v)
        M1, M2 = Vl @ P[l, l], I
        M3, M4 = Vl, P[l, lp]
        M5, M6 = I, P[lp, lp] @ Vlp
        M7, M8 = P[l, lp], Vlp
        terms = [
            ((l, lp), np.kron(M2.T, M1)),
            ((l, l), np.kron(M4.T, M3) @ K),
            ((lp, l), np.kron(M6.T, M5) @ K),
            ((lp, lp), np.kron(M8.T, M7)),
        ]
        rs = slice(row * r * r, (row + 1) * r * r)
        for blk, J in terms:
            c = index[blk]
            D[rs, c * r * r:(c + 1) * r * r] += J
    return D


def gc_sigma_bb(st: Sequence[_State], sets: SparsitySets, N: int, T: int, h: float) -> np.ndarray:
    """Plug-in for ``NTh * Cov(B)``, B stacking ``vec(mu_{u,v})``.

    ``mu_{u,v} = (1/(N T(s_u))) sum_{i,t} F^u_t e^u_it lambda_{v,i}'``; entry
    ``(k, m)`` of block ``(u, v)`` is paired with ``(k', m')`` of ``(p, q)``
    through a sum over the joint set of
    ``F^u_tk F^p_t'k' lambda_{v,im} lambda_{q,i'm'} e^u_it e^p_i't'``.
    """
    r = st[0].L.shape[1]
    M = sets.joint_mask(N, T)
    Z = []
    for u, v in ((0, 0), (0, 1), (1, 0), (1, 1)):
        # Z[(i,t), k + m r] = F_u[t,k] E_u[i,t] L_v[i,m]
        FE = st[u].E[:, :, None] * st[u].F[None, :, :]  # (N, T, r): k
        Zuv = FE[:, :, :, None] * st[v].L[:, None, None, :]  # (N, T, k, m)
        Z.append((Zuv.reshape(N * T, r, r).transpose(0, 2, 1).reshape(N * T, r * r), u))
    blocks = [[None] * 4 for _ in range(4)]
    MZ = [M @ z for z, _ in Z]
    for a, (Za, u) in enumerate(Z):
        for b, (_, p) in enumerate(Z):
            c = T * h / (N * st[u].Ts * st[p].Ts)
            blocks[a][b] = c * (Za.T @ MZ[b])
    Sigma = _sym(np.block(blocks))
    return Sigma


def _psd_repair(Sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(Sigma)
    tr = max(np.trace(Sigma), 0.0)
    if vals.min() < -PSD_TOL * tr:
        warnings.warn(f"clipping negative eigenvalue {vals.min():.3g} of the B covariance",
                      NumericalWarning, stacklevel=3)
        vals = np.clip(vals, 0.0, None)
        return _sym((vecs * vals) @ vecs.T)
    return Sigma


def gc_test(nfit1: NormalizedFit, nfit2: NormalizedFit, sets: SparsitySets | None = None,
            N: int | None = None, T: int | None = None, h: float | None = None,
            *, null_scaling: bool = True) -> GcTestResult:
    """Bias-corrected test that the loading spans at two states coincide.

    The statistic ``sqrt(NTh) (rho_hat - r - xi'b) / sqrt(variance)`` is
    approximately standard normal when the spans agree and diverges to minus
    infinity otherwise, so the p-value is the lower normal tail.

    Under the null the first-order terms of ``rho_hat`` cancel and
    ``rho_hat - r - xi'b`` is a centered quadratic form in the errors.  The
    gradient plug-in ``xi' D Sigma D' xi`` then estimates twice its variance,
    so by default ``variance`` is half of it (``null_scaling``).  Pass
    ``null_scaling=False`` for the unscaled plug-in, kept in ``details``
    either way.

    Raises
    ------
    ZeroVariance
        If the residuals vanish and the statistic is undefined.
    """
    if sets is None:
        sets = SparsitySets()
    f1, f2 = nfit1.fit, nfit2.fit
    if f1.X.shape != f2.X.shape:
        raise DimensionMismatch("fits come from panels of different shapes")
    if f1.r != f2.r:
        raise DimensionMismatch(f"fits have different factor counts {f1.r} and {f2.r}")
    N = f1.N if N is None else N
    T = f1.T if T is None else T
    h = f1.h if h is None else h
    if (N, T) != f1.X.shape:
        raise DimensionMismatch(f"N, T = {(N, T)} do not match the panel {f1.X.shape}")
    r = f1.r
    st = (_state(nfit1), _state(nfit2))

    G1 = _gram(st[0].L, st[0].L, N)
    G2 = _gram(st[0].L, st[1].L, N)
    G3 = _gram(st[1].L, st[0].L, N)
    G4 = _gram(st[1].L, st[1].L, N)
    G1i = _checked_inv(G1, "first loading Gram")
    G4i = _checked_inv(G4, "second loading Gram")
    rho = float(np.trace(G1i @ G2 @ G4i @ G3))

    resid_energy = sum(float(np.sum(s.E**2)) for s in st)
    data_energy = sum(float(np.sum(f.projected_data**2)) for f in (f1, f2))
    if resid_energy <= 1e-24 * max(data_energy, np.finfo(float).tiny):
        raise ZeroVariance("residuals vanish; the test statistic is undefined")

    xi = gc_xi(G1, G2, G3, G4)
    b = np.concatenate([vec(B) for B in gc_bias_terms(st, sets, N, T)])
    D = gc_D(st, N)
    Sigma = _psd_repair(gc_sigma_bb(st, sets, N, T, h))
    g = D.T @ xi
    plugin = float(g @ Sigma @ g)
    variance = NULL_VARIANCE_FACTOR * plugin if null_scaling else plugin
    if not variance > 0:
        raise ZeroVariance("estimated variance of the generalized correlation is zero")
    bias = float(xi @ b)
    stat = float(np.sqrt(N * T * h) * (rho - r - bias) / np.sqrt(variance))
    return GcTestResult(
        s1=f1.s, s2=f2.s, rho_hat=rho, r=r, bias=bias, variance=variance,
        statistic=stat, p_value=float(stats.norm.cdf(stat)),
        details={"xi": xi, "b": b, "D": D, "Sigma": Sigma, "plugin_variance": plugin},
    )


@dataclass
class TestGrid:
    states: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    errors: dict

    __test__ = False


def pairwise_test_grid(X, S, grid, h: float, r: int, kind: str = "gaussian",
                       sets: SparsitySets | None = None, **fit_kwargs) -> TestGrid:
    """Generalized correlation test for every unordered pair of grid states.

    Both matrices are symmetric with NaN on the diagonal; failed fits or tests
    leave NaN cells and are recorded in ``errors`` keyed by index pairs.
    """
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    tv = np.full((n, n), np.nan)
    pv = np.full((n, n), np.nan)
    errors: dict = {}
    nfits: list[NormalizedFit | None] = []
    for k, s in enumerate(grid):
        try:
            nfits.append(normalize_fit(fit_conditional(X, S, s, h, r, kind, **fit_kwargs)))
        except (EffectiveSampleTooSmall, SingularEigenvalue) as exc:
            nfits.append(None)
            errors[(k, k)] = exc
    for a in range(n):
        for b in range(a + 1, n):
            if nfits[a] is None or nfits[b] is None:
                errors[(a, b)] = errors.get((a, a)) or errors.get((b, b))
                continue
            try:
                res = gc_test(nfits[a], nfits[b], sets)
            except SVFactorError as exc:
                errors[(a, b)] = exc
                continue
            tv[a, b] = tv[b, a] = res.statistic
            pv[a, b] = pv[b, a] = res.p_value
    return TestGrid(grid, tv, pv, errors)
