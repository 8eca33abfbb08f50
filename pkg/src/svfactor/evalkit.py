"""Explained variation, out-of-sample projection, backtests and factor portfolios."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    EffectiveSampleTooSmall,
    NumericalWarning,
    SingularFactorCov,
    SVFactorError,
    ZeroDenominator,
)
from .estimator import SweepPoint, fit_conditional
from .kernels import DEFAULT_MIN_EFFECTIVE_SIZE

RIDGE_REL = 1e-8
COND_LIMIT = 1e12


@dataclass(frozen=True)
class RsqReport:
    rsq_x: float
    rsq_c: float | None
    scope: str
    n_factors: int | None = None
    n_excluded: int = 0


def rsq(X, C_hat, C_true=None, *, scope: str = "in_sample", n_factors: int | None = None) -> RsqReport:
    """Uncentered explained variation of ``X`` (and of ``C_true`` when given).

    Columns of ``C_hat`` containing NaN are dropped from every sum and counted
    in ``n_excluded``.
    """
    X = np.asarray(X, dtype=float)
    C_hat = np.asarray(C_hat, dtype=float)
    if X.shape != C_hat.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {C_hat.shape}")
    keep = ~np.any(np.isnan(C_hat), axis=0) if C_hat.ndim == 2 else np.ones(1, bool)
    Xk, Ck = X[..., keep], C_hat[..., keep]
    den = float(np.sum(Xk**2))
    if den == 0:
        raise ZeroDenominator("sum of squared observations is zero")
    rx = 1.0 - float(np.sum((Xk - Ck) ** 2)) / den
    rc = None
    if C_true is not None:
        Ct = np.asarray(C_true, dtype=float)
        if Ct.shape != X.shape:
            raise ValueError(f"shape mismatch {X.shape} vs {Ct.shape}")
        Ct = Ct[..., keep]
        denc = float(np.sum(Ct**2))
        if denc == 0:
            raise ZeroDenominator("sum of squared true common components is zero")
        rc = 1.0 - float(np.sum((Ct - Ck) ** 2)) / denc
    return RsqReport(rx, rc, scope, n_factors, int(np.sum(~keep)))


def project_onto(L: np.ndarray, X_cols: np.ndarray) -> np.ndarray:
    """``L (L'L)^-1 L' X``: least-squares projection onto the span of ``L``."""
    coef, *_ = np.linalg.lstsq(L, X_cols, rcond=None)
    return L @ coef


def pca_loadings(X_train, r: int) -> np.ndarray:
    """Leading ``r`` left singular vectors of the training panel (constant-loading PCA)."""
    u, _, _ = np.linalg.svd(np.asarray(X_train, dtype=float), full_matrices=False)
    return u[:, :r]


@dataclass(frozen=True)
class OosResult:
    common: np.ndarray
    valid: np.ndarray
    errors: dict = field(default_factory=dict, repr=False)

    @property
    def n_failed(self) -> int:
        return int(np.sum(~self.valid))


def oos_common_component(X_train, S_train, X_test, S_test, h: float, r: int, kind: str = "gaussian",
                         *, min_effective_size: float | None = DEFAULT_MIN_EFFECTIVE_SIZE,
                         **fit_kwargs) -> OosResult:
    """Project each test observation onto training loadings evaluated at its state.

    For every test time ``t`` the loadings ``L = Lambda_hat(S_t)`` are fitted on
    the training panel only and ``C_t = L (L'L)^-1 L' X_t``.  Times whose state
    has too little training mass are NaN and reported in ``errors``.
    """
    X_train = np.asarray(X_train, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    S_test = np.asarray(S_test, dtype=float)
    if X_test.shape[1] != S_test.shape[0]:
        raise ValueError("test panel and test states have different lengths")
    out = np.full(X_test.shape, np.nan)
    valid = np.zeros(X_test.shape[1], dtype=bool)
    errors = {}
    for t, s in enumerate(S_test):
        try:
            fit = fit_conditional(X_train, S_train, s, h, r, kind,
                                  min_effective_size=min_effective_size, **fit_kwargs)
        except EffectiveSampleTooSmall as exc:
            errors[t] = exc
            continue
        out[:, t] = project_onto(fit.loadings, X_test[:, t])
        valid[t] = True
    return OosResult(out, valid, errors)


def in_sample_common_component(X, S, h: float, r: int, kind: str = "gaussian", **kw) -> OosResult:
    """Common component with every time fitted at its own state on the full panel."""
    return oos_common_component(X, S, X, S, h, r, kind, **kw)


def constant_common_component(X_train, X_test, r: int) -> np.ndarray:
    return project_onto(pca_loadings(X_train, r), np.asarray(X_test, dtype=float))


@dataclass(frozen=True)
class BacktestReport:
    train_ends: np.ndarray
    common: np.ndarray
    valid: np.ndarray
    rsq: RsqReport
    model: str


def _check_schedule(T: int, initial_train: int, refit_every: int):
    if refit_every < 1:
        raise ValueError("refit_every must be at least 1")
    if not 2 <= initial_train < T:
        raise ValueError(f"initial_train must lie in [2, T), got {initial_train}")
    return np.arange(initial_train, T, refit_every)


def expanding_backtest(X, S, initial_train: int, h: float, r: int, kind: str = "gaussian",
                       refit_every: int = 21, *, model: str = "state", C_true=None,
                       **fit_kwargs) -> BacktestReport:
    """Walk-forward evaluation with an expanding training window.

    At each train end ``k`` the model is fitted on columns ``[0, k)`` and used
    for test columns ``[k, k + refit_every)``.  ``model`` is ``"state"`` or
    ``"constant"``.
    """
    X = np.asarray(X, dtype=float)
    S = np.asarray(S, dtype=float)
    N, T = X.shape
    ends = _check_schedule(T, initial_train, refit_every)
    common = np.full((N, T), np.nan)
    valid = np.zeros(T, dtype=bool)
    for k in ends:
        stop = min(k + refit_every, T)
        if model == "state":
            res = oos_common_component(X[:, :k], S[:k], X[:, k:stop], S[k:stop], h, r, kind, **fit_kwargs)
            common[:, k:stop] = res.common
            valid[k:stop] = res.valid
        elif model == "constant":
            common[:, k:stop] = constant_common_component(X[:, :k], X[:, k:stop], r)
            valid[k:stop] = True
        else:
            raise ValueError(f"model must be 'state' or 'constant', got {model!r}")
    test = slice(initial_train, T)
    ct = None if C_true is None else np.asarray(C_true)[:, test]
    report = rsq(X[:, test], common[:, test], ct, scope="out_of_sample", n_factors=r)
    return BacktestReport(ends, common, valid, report, model)


# --------------------------------------------------------------------------
# mean-variance factor portfolio


def mv_weights(factor_returns) -> tuple[np.ndarray, bool]:
    """Tangency weights ``Sigma^-1 mu`` scaled to unit gross exposure.

    Returns the weights and whether the ridge fallback was used.
    """
    Fr = np.asarray(factor_returns, dtype=float)
    if Fr.ndim == 1:
        Fr = Fr[:, None]
    mu = Fr.mean(axis=0)
    Sig = np.atleast_2d(np.cov(Fr, rowvar=False, ddof=1))
    ridged = False
    if not np.all(np.isfinite(Sig)) or np.linalg.cond(Sig) > COND_LIMIT:
        tr = float(np.trace(Sig))
        if not tr > 0:
            raise SingularFactorCov("factor covariance has zero trace")
        Sig = Sig + RIDGE_REL * tr * np.eye(Sig.shape[0])
        ridged = True
    w = np.linalg.solve(Sig, mu)
    gross = float(np.abs(w).sum())
    if gross == 0:
        raise SingularFactorCov("factor means are zero; portfolio direction undefined")
    return w / gross, ridged


def sharpe_ratio(excess, periods_per_year: float = 252.0) -> float:
    excess = np.asarray(excess, dtype=float)
    sd = excess.std(ddof=1)
    if sd == 0:
        raise ZeroDenominator("excess returns have zero dispersion")
    return float(excess.mean() / sd * np.sqrt(periods_per_year))


def _anchored_factors(L: np.ndarray, X_cols: np.ndarray, L_ref: np.ndarray) -> np.ndarray:
    # rotate L toward L_ref so factor coordinates are comparable across states
    G, *_ = np.linalg.lstsq(L, L_ref, rcond=None)
    La = L @ G
    coef, *_ = np.linalg.lstsq(La, X_cols, rcond=None)
    return coef.T


def factor_series(X_fit, S_fit, X_eval, S_eval, h: float, r: int, kind: str = "gaussian",
                  model: str = "state", **fit_kwargs) -> np.ndarray:
    """Factor returns of ``X_eval`` from loadings estimated on ``X_fit``.

    State-model loadings at each evaluation state are rotated toward the
    constant PCA loadings of ``X_fit``, which fixes one coordinate system for
    the whole series.  Times without enough kernel mass are NaN.
    """
    X_fit = np.asarray(X_fit, dtype=float)
    X_eval = np.asarray(X_eval, dtype=float)
    L_ref = pca_loadings(X_fit, r) * np.sqrt(X_fit.shape[0])
    if model == "constant":
        return _anchored_factors(L_ref, X_eval, L_ref)
    if model != "state":
        raise ValueError(f"model must be 'state' or 'constant', got {model!r}")
    out = np.full((X_eval.shape[1], r), np.nan)
    for t, s in enumerate(np.asarray(S_eval, dtype=float)):
        try:
            fit = fit_conditional(X_fit, S_fit, s, h, r, kind, **fit_kwargs)
        except EffectiveSampleTooSmall:
            continue
        out[t] = _anchored_factors(fit.loadings, X_eval[:, [t]], L_ref)[0]
    return out


@dataclass(frozen=True)
class PortfolioReport:
    returns: np.ndarray
    excess: np.ndarray
    times: np.ndarray
    weights: np.ndarray
    train_ends: np.ndarray
    sharpe: float
    risk_free_assumed_zero: bool
    ridge_steps: tuple


def mv_factor_portfolio(X, S, initial_train: int, h: float, r: int, kind: str = "gaussian",
                        refit_every: int = 21, *, risk_free=None, periods_per_year: float = 252.0,
                        model: str = "state", **fit_kwargs) -> PortfolioReport:
    """Mean-variance portfolio of estimated factors on an expanding window.

    At each train end the factor series over the training window gives
    ``w ~ Sigma^-1 mu`` (unit gross exposure).  Those weights are held over the
    following test block, whose factor returns come from the same training
    fit.  ``risk_free`` is a per-period series aligned with ``X`` columns.
    """
    X = np.asarray(X, dtype=float)
    S = np.asarray(S, dtype=float)
    N, T = X.shape
    ends = _check_schedule(T, initial_train, refit_every)
    rf_zero = risk_free is None
    if rf_zero:
        warnings.warn("no risk-free series supplied; using zero", NumericalWarning, stacklevel=2)
        rf = np.zeros(T)
    else:
        rf = np.asarray(risk_free, dtype=float)
        if rf.shape != (T,):
            raise ValueError(f"risk_free must have length {T}")
    rets, times, weights, ridge_steps = [], [], [], []
    for k in ends:
        stop = min(k + refit_every, T)
        Ftrain = factor_series(X[:, :k], S[:k], X[:, :k], S[:k], h, r, kind, model, **fit_kwargs)
        Ftrain = Ftrain[~np.any(np.isnan(Ftrain), axis=1)]
        try:
            w, ridged = mv_weights(Ftrain)
        except SVFactorError:
            continue
        if ridged:
            ridge_steps.append(int(k))
        Ftest = factor_series(X[:, :k], S[:k], X[:, k:stop], S[k:stop], h, r, kind, model, **fit_kwargs)
        ok = ~np.any(np.isnan(Ftest), axis=1)
        rets.append(Ftest[ok] @ w)
        times.append(np.arange(k, stop)[ok])
        weights.append(w)
    returns = np.concatenate(rets) if rets else np.array([])
    times = np.concatenate(times) if times else np.array([], dtype=int)
    excess = returns - rf[times]
    sr = sharpe_ratio(excess, periods_per_year) if excess.size > 1 else float("nan")
    return PortfolioReport(returns, excess, times, np.array(weights), ends, sr, rf_zero, tuple(ridge_steps))


def variance_explained_shares(sweep: Sequence[SweepPoint]) -> tuple[np.ndarray, np.ndarray]:
    """States and an (n_states, r) matrix of variance shares (NaN rows for failed points)."""
    states = np.array([p.s for p in sweep], dtype=float)
    r = max((p.fit.r for p in sweep if p.ok), default=0)
    shares = np.full((len(sweep), r), np.nan)
    for k, p in enumerate(sweep):
        if p.ok:
            shares[k] = p.variance_shares
    return states, shares
