import dataclasses

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from conftest import rank_r_panel
from svfactor import (
    DimensionMismatch,
    RankDeficient,
    SparsitySets,
    ZeroVariance,
    common_components,
    estimate_common_se,
    estimate_factor_cov,
    estimate_loading_cov,
    fit_conditional,
    gc_test,
    generalized_correlation,
    kernel_weights,
    normalize_fit,
    pairwise_test_grid,
)
from svfactor.estimator import ConditionalFit
from svfactor.inference import (
    _state,
    commutation_matrix,
    common_se_grid,
    gc_bias_terms,
    gc_sigma_bb,
    gc_xi,
    vec,
)
from svfactor.simlab import DgpConfig, generate_panel


def _small_fit(seed, N=6, T=9, r=2, s=0.0, h=0.8):
    rng = np.random.default_rng(seed)
    _, _, X = rank_r_panel(rng, N, T, r, noise=0.7)
    S = rng.uniform(-1, 1, T)
    return fit_conditional(X, S, s, h, r, min_effective_size=None)


def _random_sets(rng, N, T):
    cross = [(i, j) for i in range(N) for j in range(i) if rng.random() < 0.4]
    time = [(t, u) for t in range(T) for u in range(t) if rng.random() < 0.4]
    joint = [((i, t), (j, u)) for i in range(N) for t in range(T) for j in range(N) for u in range(T)
             if (i * T + t) < (j * T + u) and rng.random() < 0.05]
    return SparsitySets.from_pairs(N, T, cross, time, joint)


def _dense(mask):
    return mask.toarray()


# ---- brute-force oracles: explicit loops over the index sets ----

def brute_pi(fit, E, t, sets, mag=False):
    a = np.abs if mag else (lambda v: v)
    N, r = fit.loadings.shape
    L = a(fit.loadings)
    W = _dense(sets.cross_mask(N))
    acc = np.zeros((r, r))
    for i in range(N):
        for j in range(N):
            if W[i, j]:
                acc += np.outer(L[i], L[j]) * a(E[i, t] * E[j, t])
    Vi = np.diag(1 / fit.eigenvalues)
    out = Vi @ (acc / N) @ Vi
    return (out + out.T) / 2


def brute_theta(fit, Ep, i, sets, mag=False):
    a = np.abs if mag else (lambda v: v)
    F = a(fit.projected_factors)
    T, r = F.shape
    W = _dense(sets.time_mask(T))
    acc = np.zeros((r, r))
    for t in range(T):
        for u in range(T):
            if W[t, u]:
                acc += np.outer(F[t], F[u]) * a(Ep[i, t] * Ep[i, u])
    out = T * fit.h / fit.effective_size**2 * acc
    return (out + out.T) / 2


def brute_common_se(fit, i, t, sets, mag=False):
    """(V, W, se) by explicit sums; ``mag`` sums absolute terms for a tolerance scale."""
    a = np.abs if mag else (lambda v: v)
    cc = common_components(fit)
    N = fit.N
    L = fit.loadings
    Ginv = np.linalg.inv(L.T @ L / N)
    gl = a(Ginv @ L[i])
    mid = brute_pi(fit, cc.residuals, t, sets, mag) * np.outer(fit.eigenvalues, fit.eigenvalues)
    v = gl @ mid @ gl
    theta = brute_theta(fit, cc.residuals_projected, i, sets, mag)
    Ft = a(cc.factors[t])
    w = Ft @ theta @ Ft
    return v, w, np.sqrt(max(v / N + w / (fit.T * fit.h), 0.0))


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("kind", ["full", "random", "banded"])
def test_plugins_match_brute_force(seed, kind):
    fit = _small_fit(seed, N=7, T=10)
    N, T = fit.N, fit.T
    rng = np.random.default_rng(seed + 100)
    sets = {"full": SparsitySets.full(N, T), "random": _random_sets(rng, N, T),
            "banded": SparsitySets.banded(time_lag=2, cross_lag=1)}[kind]
    cc = common_components(fit)
    # generic residual matrices for the two covariance plug-ins
    E = rng.standard_normal((N, T))
    for t in range(T):
        got = estimate_factor_cov(fit, E, t, sets).pi_hat
        assert np.allclose(got, brute_pi(fit, E, t, sets), rtol=1e-12, atol=1e-12 * np.abs(got).max())
    for i in range(N):
        got = estimate_loading_cov(fit, E, i, sets).theta_hat
        assert np.allclose(got, brute_theta(fit, E, i, sets), rtol=1e-12, atol=1e-12 * np.abs(got).max())
    # the common component uses the fitted residuals, orthogonal to the fit, so
    # under the full set the sums cancel and the scale comes from absolute terms
    for i, t in [(0, cc.valid_times[0]), (N - 1, cc.valid_times[-1])]:
        got = estimate_common_se(fit, cc.residuals, i, t, sets)
        v, w, se = brute_common_se(fit, i, t, sets)
        vm, wm, _ = brute_common_se(fit, i, t, sets, mag=True)
        assert got.v_hat == pytest.approx(v, rel=1e-12, abs=1e-12 * vm)
        assert got.w_hat == pytest.approx(w, rel=1e-12, abs=1e-12 * wm)
        assert got.se == pytest.approx(se, rel=1e-12, abs=1e-6 * np.sqrt(vm / N + wm / (T * fit.h)))
    v_all, w_all, se_all = common_se_grid(fit, sets, times=cc.valid_times[:3])
    for k, t in enumerate(cc.valid_times[:3]):
        assert se_all[2, k] == pytest.approx(estimate_common_se(fit, cc.residuals, 2, t, sets).se, rel=1e-12)


def _hand_fit(N, T, L, F, V, h, w):
    weights = kernel_weights("uniform", np.zeros(T), 0.0, 0.5, min_effective_size=None)
    weights = weights.__class__(np.asarray(w, float), 0.0, h)
    return ConditionalFit(0.0, h, L.shape[1], weights, F, L, np.asarray(V, float), np.zeros((N, T)))


def test_factor_cov_hand_cases():
    N, T = 5, 3
    fit = _hand_fit(N, T, np.ones((N, 1)), np.ones((T, 1)), [1.0], 0.5, np.ones(T))
    assert estimate_factor_cov(fit, np.ones((N, T)), 1, SparsitySets()).pi_hat[0, 0] == pytest.approx(1.0)
    assert estimate_factor_cov(fit, np.zeros((N, T)), 1, SparsitySets()).pi_hat[0, 0] == 0.0


def test_loading_cov_hand_cases():
    # T=2, h=0.5, T(s)=1, F=(1,1), residuals (1,1): (2*0.5/1)*(1+1) = 2
    fit = _hand_fit(1, 2, np.ones((1, 1)), np.ones((2, 1)), [1.0], 0.5, [0.5, 0.5])
    assert estimate_loading_cov(fit, np.ones((1, 2)), 0, SparsitySets()).theta_hat[0, 0] == pytest.approx(2.0)
    assert estimate_loading_cov(fit, np.zeros((1, 2)), 0, SparsitySets()).theta_hat[0, 0] == 0.0


def test_common_se_zero_residuals():
    rng = np.random.default_rng(1)
    X = np.outer(rng.standard_normal(8), rng.standard_normal(30))
    fit = fit_conditional(X, rng.uniform(-1, 1, 30), 0.0, 1.0, 1, min_effective_size=None)
    cc = common_components(fit)
    se = estimate_common_se(fit, cc.residuals, 0, cc.valid_times[0], SparsitySets())
    assert se.se == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 10_000), st.sampled_from([SparsitySets(), SparsitySets.banded(2, 1)]))
def test_covariances_symmetric_psd(seed, sets):
    fit = _small_fit(seed, N=8, T=12)
    cc = common_components(fit)
    for t in cc.valid_times[:3]:
        P = estimate_factor_cov(fit, cc.residuals, t, sets).pi_hat
        assert np.allclose(P, P.T, atol=1e-14)
        if sets.is_diagonal():  # a sum of rank one PSD terms
            assert np.linalg.eigvalsh(P).min() >= -1e-10 * max(np.trace(P), 1e-300)
    for i in range(3):
        Th = estimate_loading_cov(fit, cc.residuals_projected, i, sets).theta_hat
        assert np.allclose(Th, Th.T, atol=1e-14)
        if sets.is_diagonal():
            assert np.linalg.eigvalsh(Th).min() >= -1e-10 * max(np.trace(Th), 1e-300)


def test_common_se_plugin_example():
    # r=1, unit loadings, residuals, factor, and Theta; N = T h gives sqrt(1/N + 1/(T h))
    N, T, h = 4, 8, 0.5
    F = np.ones((T, 1))
    Ts = T * h * 1.0  # weights of 0.5 each sum to 4
    weights = np.full(T, 0.5)
    L = np.ones((N, 1))
    fit = _hand_fit(N, T, L, F * np.sqrt(weights)[:, None], [1.0], h, weights)
    X = np.full((N, T), 2.0)  # common part 1 plus unit residual
    fit = ConditionalFit(0.0, h, 1, fit.weights, fit.projected_factors, L, np.ones(1), X)
    resid = np.ones((N, T))
    # Theta_i = Th/T(s)^2 * sum_t F_t^2 e_it^2 with projected residuals sqrt(w)*1
    se = estimate_common_se(fit, resid, 0, 0, SparsitySets())
    theta = T * h / Ts**2 * np.sum(weights * weights)
    assert se.v_hat == pytest.approx(1.0)
    assert se.w_hat == pytest.approx(theta)
    assert se.se == pytest.approx(np.sqrt(1 / N + theta / (T * h)))


# ---- generalized correlation ----

def _canonical_oracle(L1, L2):
    return float(np.sum(np.cos(scipy.linalg.subspace_angles(L1, L2)) ** 2))


def test_gc_examples(rng):
    L = rng.standard_normal((30, 3))
    assert generalized_correlation(L, L) == pytest.approx(3.0, abs=1e-12)
    Q, _ = np.linalg.qr(rng.standard_normal((30, 4)))
    assert generalized_correlation(Q[:, :2], Q[:, 2:]) == pytest.approx(0.0, abs=1e-12)
    G = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    assert generalized_correlation(L, L @ G) == pytest.approx(3.0, abs=1e-10)


def test_gc_errors(rng):
    with pytest.raises(RankDeficient):
        generalized_correlation(np.ones((10, 2)), rng.standard_normal((10, 2)))
    with pytest.raises(DimensionMismatch):
        generalized_correlation(rng.standard_normal((10, 2)), rng.standard_normal((9, 2)))


def _loadings_pair(seed, N, r1, r2):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((N, r1)), rng.standard_normal((N, r2)), rng


@given(st.integers(0, 10_000), st.integers(5, 40), st.integers(1, 4), st.integers(1, 4))
def test_gc_matches_canonical_correlations(seed, N, r1, r2):
    L1, L2, _ = _loadings_pair(seed, N, r1, r2)
    rho = generalized_correlation(L1, L2)
    assert rho == pytest.approx(_canonical_oracle(L1, L2), abs=1e-9)
    assert -1e-12 <= rho <= min(r1, r2) + 1e-8
    assert rho == pytest.approx(generalized_correlation(L2, L1), abs=1e-10)


@given(st.integers(0, 10_000), st.integers(12, 40), st.integers(1, 4), st.integers(1, 4))
def test_gc_rotation_invariance(seed, N, r1, r2):
    L1, L2, rng = _loadings_pair(seed, N, r1, r2)
    G1 = rng.standard_normal((r1, r1)) + 2 * np.eye(r1)
    G2 = rng.standard_normal((r2, r2)) + 2 * np.eye(r2)
    if np.linalg.cond(G1) > 1e6 or np.linalg.cond(G2) > 1e6:
        return
    assert generalized_correlation(L1 @ G1, L2 @ G2) == pytest.approx(generalized_correlation(L1, L2), abs=1e-9)


# ---- vectorization and the test statistic ----

@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_commutation_and_kronecker_identity(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    assert np.array_equal(commutation_matrix(m, n) @ vec(A), vec(A.T))
    P, Q = rng.standard_normal((3, m)), rng.standard_normal((n, 2))
    assert np.allclose(vec(P @ A @ Q), np.kron(Q.T, P) @ vec(A), atol=1e-12)


def test_xi_gives_directional_derivative(rng):
    # perturbations keep the structure G3 = G2' of the loading Grams
    r = 3
    A, B = rng.standard_normal((40, r)), rng.standard_normal((40, r))
    Gs = [A.T @ A / 40, A.T @ B / 40, B.T @ A / 40, B.T @ B / 40]

    def f(G1, G2, G3, G4):
        return np.trace(np.linalg.inv(G1) @ G2 @ np.linalg.inv(G4) @ G3)

    xi = gc_xi(*Gs)
    eps = 1e-6
    for _ in range(10):
        d1, d2, d4 = (rng.standard_normal((r, r)) for _ in range(3))
        d1, d4 = d1 + d1.T, d4 + d4.T
        dG = [d1, d2, d2.T, d4]
        plus = [G + eps * d for G, d in zip(Gs, dG)]
        minus = [G - eps * d for G, d in zip(Gs, dG)]
        num = (f(*plus) - f(*minus)) / (2 * eps)
        assert xi @ np.concatenate([vec(d) for d in dG]) == pytest.approx(num, abs=1e-7)


def _two_state_fits(seed, N=6, T=8, r=1):
    rng = np.random.default_rng(seed)
    _, _, X = rank_r_panel(rng, N, T, r, noise=0.8)
    S = rng.uniform(-1, 1, T)
    f1 = normalize_fit(fit_conditional(X, S, -0.3, 0.9, r, min_effective_size=None))
    f2 = normalize_fit(fit_conditional(X, S, 0.4, 0.9, r, min_effective_size=None))
    return f1, f2


def brute_sigma_bb(st_, sets, N, T, h):
    r = st_[0].L.shape[1]
    J = _dense(sets.joint_mask(N, T))
    blocks = ((0, 0), (0, 1), (1, 0), (1, 1))
    out = np.zeros((4 * r * r, 4 * r * r))
    for a, (u, v) in enumerate(blocks):
        for b, (p, q) in enumerate(blocks):
            c = T * h / (N * st_[u].Ts * st_[p].Ts)
            for k in range(r):
                for m in range(r):
                    for k2 in range(r):
                        for m2 in range(r):
                            acc = 0.0
                            for i in range(N):
                                for t in range(T):
                                    for j in range(N):
                                        for t2 in range(T):
                                            if J[i * T + t, j * T + t2]:
                                                acc += (st_[u].F[t, k] * st_[u].E[i, t] * st_[v].L[i, m]
                                                        * st_[p].F[t2, k2] * st_[p].E[j, t2] * st_[q].L[j, m2])
                            out[a * r * r + k + m * r, b * r * r + k2 + m2 * r] = c * acc
    return (out + out.T) / 2


def brute_bias_blocks(st_, sets, N, T):
    Wt = _dense(sets.time_mask(T))
    Wn = _dense(sets.cross_mask(N))

    def P(a, b):
        return st_[a].L.T @ st_[b].L / N

    def inner(u, v):
        acc = 0.0
        for i in range(N):
            for t in range(T):
                for t2 in range(T):
                    if Wt[t, t2]:
                        acc = acc + np.outer(st_[u].F[t], st_[v].F[t2]) * st_[u].E[i, t] * st_[v].E[i, t2]
        return acc / (N * st_[u].Ts * st_[v].Ts)

    def x(u, v, p, w):
        return np.diag(st_[p].inv_v) @ P(p, u) @ inner(u, v) @ P(v, w) @ np.diag(st_[w].inv_v)

    def z(p, w):
        acc = 0.0
        for t in range(T):
            for i in range(N):
                for j in range(N):
                    if Wn[i, j]:
                        acc = acc + np.outer(st_[p].L[i], st_[w].L[j]) * st_[p].E[i, t] * st_[p].E[j, t]
        return np.diag(st_[p].inv_v) @ acc / (N**2 * st_[p].Ts)

    out = []
    for l, lp in ((0, 0), (0, 1), (1, 0), (1, 1)):
        out.append(x(l, lp, l, lp) + x(l, l, l, lp) + x(lp, lp, l, lp) + z(l, lp) + z(lp, l))
    return out


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("which", ["full", "banded"])
def test_gc_plugins_match_brute_force(seed, which):
    N, T = 4, 6
    f1, f2 = _two_state_fits(seed, N, T, r=2 if seed == 2 else 1)
    sets = SparsitySets.full(N, T) if which == "full" else SparsitySets.banded(1, 1)
    rng = np.random.default_rng(seed)
    # generic residuals: fitted ones cancel exactly under the full set
    st_ = tuple(dataclasses.replace(_state(f), E=rng.standard_normal((N, T))) for f in (f1, f2))
    got = gc_sigma_bb(st_, sets, N, T, 0.9)
    ref = brute_sigma_bb(st_, sets, N, T, 0.9)
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
    for g, b in zip(gc_bias_terms(st_, sets, N, T), brute_bias_blocks(st_, sets, N, T)):
        assert np.allclose(g, b, rtol=1e-12, atol=1e-12 * np.abs(b).max())


def test_gc_statistic_relabel_invariant():
    sim = generate_panel(DgpConfig(N=60, T=300, loading_model="constant", seed=5))
    a = normalize_fit(fit_conditional(sim.X, sim.S, 0.0, 0.3, 1))
    b = normalize_fit(fit_conditional(sim.X, sim.S, 0.6, 0.3, 1))
    ab, ba = gc_test(a, b), gc_test(b, a)
    assert ab.statistic == pytest.approx(ba.statistic, abs=1e-8)
    assert 0 <= ab.rho_hat <= 1 + 1e-8
    assert ab.p_value == pytest.approx(ba.p_value, abs=1e-8)


def test_gc_null_bias_negative():
    sim = generate_panel(DgpConfig(N=100, T=500, loading_model="constant", seed=2))
    a = normalize_fit(fit_conditional(sim.X, sim.S, 0.4, 0.3, 1))
    b = normalize_fit(fit_conditional(sim.X, sim.S, 0.6, 0.3, 1))
    res = gc_test(a, b)
    assert res.bias < 0
    assert res.variance > 0


def test_gc_noiseless_raises_zero_variance(rng):
    L, F, X = rank_r_panel(rng, 20, 80, 2)
    S = rng.uniform(-1, 1, 80)
    a = normalize_fit(fit_conditional(X, S, -0.3, 0.5, 2))
    b = normalize_fit(fit_conditional(X, S, 0.3, 0.5, 2))
    assert generalized_correlation(a.loadings_bar, b.loadings_bar) == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(ZeroVariance):
        gc_test(a, b)


def test_gc_rejects_mismatched_fits(rng):
    _, _, X = rank_r_panel(rng, 10, 40, 2, noise=1.0)
    S = rng.uniform(-1, 1, 40)
    a = normalize_fit(fit_conditional(X, S, 0.0, 0.6, 1))
    b = normalize_fit(fit_conditional(X, S, 0.2, 0.6, 2))
    with pytest.raises(DimensionMismatch):
        gc_test(a, b)


def test_gc_power_on_break_panel():
    sim = generate_panel(DgpConfig(N=100, T=500, state_model="uniform01", loading_model="break_linear", seed=1))
    a = normalize_fit(fit_conditional(sim.X, sim.S, 0.1, 0.4, 1, "uniform"))
    b = normalize_fit(fit_conditional(sim.X, sim.S, 0.9, 0.4, 1, "uniform"))
    res = gc_test(a, b)
    assert res.statistic < -3 and res.p_value < 1e-3


def test_pairwise_grid():
    sim = generate_panel(DgpConfig(N=60, T=400, state_model="uniform01", loading_model="break_linear", seed=4))
    grid = pairwise_test_grid(sim.X, sim.S, [0.1, 0.9], 0.4, 1, "uniform")
    a = normalize_fit(fit_conditional(sim.X, sim.S, 0.1, 0.4, 1, "uniform"))
    b = normalize_fit(fit_conditional(sim.X, sim.S, 0.9, 0.4, 1, "uniform"))
    assert grid.t_values[0, 1] == pytest.approx(gc_test(a, b).statistic, rel=1e-12)
    assert np.isnan(grid.t_values[0, 0]) and np.isnan(grid.p_values[1, 1])

    states = [0.05, 0.15, 0.25, 0.5, 0.7, 0.9, 5.0]
    g = pairwise_test_grid(sim.X, sim.S, states, 0.2, 1, "uniform")
    assert np.array_equal(g.t_values, g.t_values.T, equal_nan=True)
    assert (6, 6) in g.errors and np.all(np.isnan(g.t_values[6]))
    across = [g.p_values[a, b] for a in range(3) for b in range(3, 6)]
    within = [g.p_values[a, b] for a in range(3, 6) for b in range(a + 1, 6)]
    assert np.mean(np.array(across) < 0.05) > np.mean(np.array(within) < 0.05)
