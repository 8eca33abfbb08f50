"""Monte Carlo studies: standardized-estimate distributions, test power, R^2 tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from ..errors import SVFactorError, ZeroVariance
from ..estimator import common_components, fit_conditional, normalize_fit, unprojected_factors
from ..evalkit import constant_common_component, in_sample_common_component, oos_common_component, rsq
from ..inference import common_se_grid, factor_cov_all, gc_test, loading_cov_all
from ..sparsity import SparsitySets
from .dgp import DgpConfig, generate_panel, local_loadings, rotation_h

TARGETS = ("loading", "factor", "common", "gc_null")


@dataclass(frozen=True)
class DistributionStudy:
    target: str
    values: np.ndarray
    mean: float
    variance: float
    ks: float
    n_reps: int
    n_failed: int
    failures: dict = field(default_factory=dict, repr=False)


def _summarize(target, vals, n_reps, failures) -> DistributionStudy:
    vals = np.asarray(vals, dtype=float)
    if vals.size == 0:
        raise ZeroVariance(f"no usable replications for {target}")
    ks = float(stats.kstest(vals, "norm").statistic)
    return DistributionStudy(target, vals, float(vals.mean()), float(vals.var(ddof=1)) if vals.size > 1 else np.nan,
                             ks, n_reps, len(failures), failures)


CENTERS = ("local", "point")


def _standardized(sim, s, h, target, sets, kind, series, center="local"):
    fit = fit_conditional(sim.X, sim.G, s, h, sim.config.r, kind)
    L = local_loadings(sim, fit) if center == "local" else sim.true_loading_at(s)
    H = rotation_h(sim, fit, L)
    N, T = sim.X.shape
    cc = common_components(fit)
    if target == "loading":
        truth = L @ np.linalg.inv(H).T
        theta = loading_cov_all(fit, cc.residuals_projected, sets, series=series)
        var = np.diagonal(theta, axis1=1, axis2=2) / (T * fit.h)
        diff = fit.loadings[series] - truth[series]
    else:
        t = int(np.argmin(np.abs(sim.G - s)))
        if target == "factor":
            pi = factor_cov_all(fit, cc.residuals, [t], sets)[0]
            var = np.diag(pi) / N
            diff = cc.factors[t] - H.T @ sim.true_factors[t]
        else:
            _, _, se = common_se_grid(fit, sets, times=[t])
            var = se[series, 0] ** 2
            truth = L @ sim.true_factors[t] if center == "local" else sim.true_common[:, t]
            diff = cc.common[series, t] - truth[series]
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise ZeroVariance("estimated standard error is zero")
    return np.ravel(diff / np.sqrt(var))


def mc_distribution_study(cfg: DgpConfig, s: float | tuple, h: float, n_reps: int, target: str, *,
                          sets: SparsitySets | None = None, kind: str = "gaussian",
                          series: Sequence[int] | int | None = None,
                          center: str = "local") -> DistributionStudy:
    """Standardized estimation errors over ``n_reps`` replications.

    ``loading``, ``factor`` and ``common`` center each estimate at its
    rotated truth and divide by the feasible plug-in standard error.  Loadings
    and common components pool the series listed in ``series`` (all by
    default); factors and common components use the time whose state is
    nearest ``s``.

    ``center="local"`` measures errors from the kernel-weighted target
    (see :func:`local_loadings`), which strips the smoothing bias that a
    bandwidth of 0.3 leaves in place; ``"point"`` uses ``Lambda(s)`` itself.
    ``gc_null`` keeps one draw of state, loadings and
    factors and redraws only the errors; ``s`` is then a pair of states.

    Failed replications are excluded and counted.
    """
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}")
    if center not in CENTERS:
        raise ValueError(f"center must be one of {CENTERS}")
    if n_reps < 1:
        raise ValueError("n_reps must be positive")
    sets = SparsitySets() if sets is None else sets
    if series is None:
        series = np.arange(cfg.N)
    series = np.atleast_1d(np.asarray(series, dtype=int))
    vals, failures = [], {}
    if cfg.error_scale == 0:
        raise ZeroVariance("noiseless design: standardized errors are 0/0")
    for rep in range(n_reps):
        try:
            if target == "gc_null":
                s1, s2 = s
                sim = generate_panel(cfg, 0, error_draw=rep)
                f1 = normalize_fit(fit_conditional(sim.X, sim.G, s1, h, cfg.r, kind))
                f2 = normalize_fit(fit_conditional(sim.X, sim.G, s2, h, cfg.r, kind))
                vals.append(np.array([gc_test(f1, f2, sets).statistic]))
            else:
                sim = generate_panel(cfg, rep)
                vals.append(_standardized(sim, s, h, target, sets, kind, series, center))
        except SVFactorError as exc:
            failures[rep] = exc
    if not vals:
        raise ZeroVariance(f"every replication failed for {target}")
    return _summarize(target, np.concatenate(vals), n_reps, failures)


# --------------------------------------------------------------------------
# power table

TABLE_I_SIZES = ((50, 250), (50, 500), (50, 1000), (100, 250), (100, 500), (100, 1000),
                 (200, 250), (200, 500), (200, 1000))
TABLE_I_PAIRS = ((0.1, 0.9), (0.25, 0.75), (0.90, 0.95))
TABLE_I_MODELS = ("break_linear", "break_quadratic")
#: kernel and bandwidth of the power designs (calibrated on the null pair)
TABLE_I_KIND = "uniform"
TABLE_I_BANDWIDTH = 0.4


@dataclass(frozen=True)
class PowerTable:
    sizes: tuple
    columns: tuple  # (loading_model, (s1, s2))
    acceptance: np.ndarray
    n_reps: int
    n_failed: np.ndarray
    critical: float = -1.65

    def cell(self, size, model, pair) -> float:
        return float(self.acceptance[self.sizes.index(tuple(size)), self.columns.index((model, tuple(pair)))])


def power_config(N: int, T: int, loading_model: str = "break_linear", seed: int = 0) -> DgpConfig:
    return DgpConfig(N=N, T=T, r=1, state_model="uniform01", loading_model=loading_model, seed=seed)


def acceptance_rate(cfg: DgpConfig, pair, n_reps: int, h: float = TABLE_I_BANDWIDTH, *, sets=None,
                    kind: str = TABLE_I_KIND,
                    critical: float = -1.65) -> tuple[float, int]:
    """Share of replications whose statistic is at least ``critical``.

    Every replication draws a fresh design (state, loadings, factors, errors).
    Returns the proportion and the number of failed replications.
    """
    sets = SparsitySets() if sets is None else sets
    accept = done = 0
    for rep in range(n_reps):
        sim = generate_panel(cfg, rep)
        try:
            f1 = normalize_fit(fit_conditional(sim.X, sim.G, pair[0], h, cfg.r, kind))
            f2 = normalize_fit(fit_conditional(sim.X, sim.G, pair[1], h, cfg.r, kind))
            stat = gc_test(f1, f2, sets).statistic
        except SVFactorError:
            continue
        done += 1
        accept += stat >= critical
    if done == 0:
        raise ZeroVariance("every replication failed")
    return accept / done, n_reps - done


def mc_power_study(sizes: Iterable = TABLE_I_SIZES, pairs: Iterable = TABLE_I_PAIRS,
                   models: Iterable[str] = TABLE_I_MODELS, n_reps: int = 500, h: float = TABLE_I_BANDWIDTH,
                   seed: int = 0, **kw) -> PowerTable:
    """Acceptance proportions with one row per (N, T) size and one column per model and pair."""
    sizes = tuple(tuple(x) for x in sizes)
    cols = tuple((m, tuple(p)) for m in models for p in pairs)
    acc = np.full((len(sizes), len(cols)), np.nan)
    fails = np.zeros_like(acc, dtype=int)
    for a, (N, T) in enumerate(sizes):
        for b, (m, p) in enumerate(cols):
            acc[a, b], fails[a, b] = acceptance_rate(power_config(N, T, m, seed), p, n_reps, h, **kw)
    return PowerTable(sizes, cols, acc, n_reps, fails)


# --------------------------------------------------------------------------
# explained variation

TABLE_A1_NOISE = (0.0, 0.1, 0.5, 1.0, 2.0)
#: state scale of the R^2 designs; gives stationary variance 1
RSQ_STATE_SIGMA = float(np.sqrt(2.0))


@dataclass(frozen=True)
class RsqRow:
    label: str
    in_x: float
    in_c: float
    out_x: float
    out_c: float


def rsq_config(N: int = 100, T: int = 500, seed: int = 0, noise: float = 0.0,
               sigma: float = RSQ_STATE_SIGMA) -> DgpConfig:
    return DgpConfig(N=N, T=T, r=1, loading_model="cubic", noise_on_state=noise, sigma=sigma, seed=seed)


def _split(T: int) -> tuple[slice, slice]:
    half = T // 2
    return slice(0, half), slice(half, T)


def rsq_row(sim, h: float, r: int = 1, *, constant: bool = False, kind: str = "gaussian") -> tuple:
    """In- and out-of-sample ``(R2_X, R2_C)`` for one panel."""
    X, G, C = sim.X, sim.G, sim.true_common
    tr, te = _split(X.shape[1])
    if constant:
        cin = constant_common_component(X, X, r)
        cout = constant_common_component(X[:, tr], X[:, te], r)
    else:
        cin = in_sample_common_component(X, G, h, r, kind, min_effective_size=None).common
        cout = oos_common_component(X[:, tr], G[tr], X[:, te], G[te], h, r, kind,
                                    min_effective_size=None).common
    a = rsq(X, cin, C, scope="in_sample", n_factors=r)
    b = rsq(X[:, te], cout, C[:, te], scope="out_of_sample", n_factors=r)
    return a.rsq_x, a.rsq_c, b.rsq_x, b.rsq_c


def mc_rsq_study(n_seeds: int = 20, N: int = 100, T: int = 500, h: float = 0.3,
                 noise_levels: Sequence[float] = TABLE_A1_NOISE, include_constant: bool = True,
                 seed: int = 0, sigma: float = RSQ_STATE_SIGMA, kind: str = "gaussian") -> list[RsqRow]:
    """Average R^2 over seeds for noisy observed states and for constant-loading PCA."""
    rows = []
    variants = [(f"G = S + {c:g} v" if c else "G = S", c, False) for c in noise_levels]
    if include_constant:
        variants.append(("constant loading", 0.0, True))
    for label, c, const in variants:
        vals = [rsq_row(generate_panel(rsq_config(N, T, seed, c, sigma), rep), h, constant=const, kind=kind)
                for rep in range(n_seeds)]
        rows.append(RsqRow(label, *np.mean(vals, axis=0)))
    return rows


@dataclass(frozen=True)
class FactorCurve:
    factors: np.ndarray
    state_x: np.ndarray
    state_c: np.ndarray
    pca_x: np.ndarray
    pca_c: np.ndarray


def two_state_config(N: int = 100, T: int = 500, seed: int = 0, r: int = 1) -> DgpConfig:
    return DgpConfig(N=N, T=T, r=r, state_model="two_state_ou", loading_model="exp_two_state", seed=seed)


def factor_count_curve(sim, max_factors: int = 10, h: float = 0.3, kind: str = "gaussian",
                       state_factors: Sequence[int] | None = None) -> FactorCurve:
    """Out-of-sample R^2 by factor count for state-PCA (first state only) and plain PCA."""
    X, C = sim.X, sim.true_common
    tr, te = _split(X.shape[1])
    ks = np.arange(1, max_factors + 1)
    sk = ks if state_factors is None else np.asarray(state_factors)
    sx, sc = np.full(ks.size, np.nan), np.full(ks.size, np.nan)
    px, pc = np.empty(ks.size), np.empty(ks.size)
    for j, k in enumerate(ks):
        cp = constant_common_component(X[:, tr], X[:, te], int(k))
        rp = rsq(X[:, te], cp, C[:, te])
        px[j], pc[j] = rp.rsq_x, rp.rsq_c
        if k in sk:
            cs = oos_common_component(X[:, tr], sim.G[tr], X[:, te], sim.G[te], h, int(k), kind,
                                      min_effective_size=None).common
            rs = rsq(X[:, te], cs, C[:, te])
            sx[j], sc[j] = rs.rsq_x, rs.rsq_c
    return FactorCurve(ks, sx, sc, px, pc)


def mc_factor_curves(n_seeds: int = 20, N: int = 100, T: int = 500, h: float = 0.3, max_factors: int = 10,
                     seed: int = 0, **kw) -> list[FactorCurve]:
    """Factor-count R^2 curves, one per seed of the two-state exponential design."""
    return [factor_count_curve(generate_panel(two_state_config(N, T, seed), rep), max_factors, h, **kw)
            for rep in range(n_seeds)]
