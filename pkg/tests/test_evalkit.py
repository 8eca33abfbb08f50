import numpy as np
import pytest

from conftest import rank_r_panel
from svfactor import SingularFactorCov, ZeroDenominator, common_components, fit_conditional, state_sweep
from svfactor.evalkit import (
    expanding_backtest,
    in_sample_common_component,
    mv_factor_portfolio,
    mv_weights,
    oos_common_component,
    rsq,
    sharpe_ratio,
    variance_explained_shares,
)
from svfactor.simlab import DgpConfig, generate_panel
from svfactor.simlab.studies import RSQ_STATE_SIGMA


def test_rsq_examples():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert rsq(X, X).rsq_x == 1.0
    assert rsq(X, np.zeros_like(X)).rsq_x == 0.0
    assert rsq(X, np.array([[1.0, 0.0], [0.0, 0.0]])).rsq_x == 0.5
    rep = rsq(X, X, C_true=X)
    assert rep.rsq_c == 1.0 and rep.scope == "in_sample"
    with pytest.raises(ZeroDenominator):
        rsq(np.zeros((2, 2)), np.zeros((2, 2)))


def test_rsq_drops_nan_columns():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    C = np.array([[1.0, np.nan], [3.0, np.nan]])
    rep = rsq(X, C)
    assert rep.rsq_x == 1.0 and rep.n_excluded == 1


def _svd_oos(X_train, X_test, r):
    u, _, _ = np.linalg.svd(X_train, full_matrices=False)
    U = u[:, :r]
    return U @ (U.T @ X_test)


def test_oos_reduces_to_pca_with_equal_weights(rng):
    _, _, X = rank_r_panel(rng, 20, 60, 2, noise=0.5)
    S = rng.uniform(-0.2, 0.2, 60)
    res = oos_common_component(X[:, :40], S[:40], X[:, 40:], S[40:], 2.0, 2, "uniform")
    assert res.valid.all()
    ref = _svd_oos(X[:, :40], X[:, 40:], 2)
    assert np.allclose(res.common, ref, atol=1e-8 * np.abs(ref).max())


def test_oos_noiseless_recovers_observations(rng):
    _, _, X = rank_r_panel(rng, 15, 50, 2)
    S = rng.uniform(-1, 1, 50)
    res = in_sample_common_component(X, S, 0.5, 2)
    v = res.valid
    assert np.allclose(res.common[:, v], X[:, v], atol=1e-8 * np.abs(X).max())


def test_oos_matches_in_sample_common_component(rng):
    _, _, X = rank_r_panel(rng, 15, 50, 2, noise=0.7)
    S = rng.uniform(-1, 1, 50)
    res = in_sample_common_component(X, S, 0.5, 2)
    for t in (0, 17, 49):
        cc = common_components(fit_conditional(X, S, S[t], 0.5, 2))
        assert np.allclose(res.common[:, t], cc.common[:, t], atol=1e-8 * np.abs(X).max())


def test_oos_records_unreachable_states(rng):
    _, _, X = rank_r_panel(rng, 10, 40, 1, noise=0.5)
    S = rng.uniform(0, 1, 40)
    res = oos_common_component(X, S, X[:, :2], np.array([0.5, 9.0]), 0.2, 1, "uniform")
    assert res.valid.tolist() == [True, False] and 1 in res.errors and res.n_failed == 1


def test_in_sample_rsq_nondecreasing_in_r():
    sim = generate_panel(DgpConfig(N=30, T=150, r=3, seed=4))
    vals = [rsq(sim.X, in_sample_common_component(sim.X, sim.S, 0.4, r).common).rsq_x for r in range(1, 5)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_backtest_single_refit_equals_split(rng):
    _, _, X = rank_r_panel(rng, 12, 60, 1, noise=0.5)
    S = rng.uniform(-1, 1, 60)
    bt = expanding_backtest(X, S, 30, 0.6, 1, refit_every=30)
    ref = oos_common_component(X[:, :30], S[:30], X[:, 30:], S[30:], 0.6, 1)
    assert np.array_equal(bt.common[:, 30:], ref.common, equal_nan=True)
    assert bt.train_ends.tolist() == [30]


def test_backtest_has_no_look_ahead(rng):
    _, _, X = rank_r_panel(rng, 12, 80, 1, noise=0.5)
    S = rng.uniform(-1, 1, 80)
    base = expanding_backtest(X, S, 40, 0.6, 1, refit_every=10)
    j = 55
    X2 = X.copy()
    X2[:, j] += 100.0
    S2 = S.copy()
    S2[j] += 0.3
    pert = expanding_backtest(X2, S2, 40, 0.6, 1, refit_every=10)
    untouched = [c for c in range(40, 60) if c != j]
    assert np.array_equal(base.common[:, untouched], pert.common[:, untouched], equal_nan=True)


def test_backtest_permuted_states_do_not_beat_in_sample():
    sim = generate_panel(DgpConfig(N=40, T=200, seed=6))
    perm = np.random.default_rng(0).permutation(sim.S)
    bt = expanding_backtest(sim.X, perm, 100, 0.3, 1, refit_every=25)
    ins = rsq(sim.X, in_sample_common_component(sim.X, perm, 0.3, 1).common).rsq_x
    assert bt.rsq.rsq_x <= ins


def test_state_model_beats_constant_out_of_sample():
    sim = generate_panel(DgpConfig(N=100, T=500, sigma=RSQ_STATE_SIGMA, seed=1))
    st = expanding_backtest(sim.X, sim.G, 250, 0.3, 1, refit_every=250)
    co = expanding_backtest(sim.X, sim.G, 250, 0.3, 1, refit_every=250, model="constant")
    assert st.rsq.rsq_x > co.rsq.rsq_x


def test_backtest_rejects_bad_schedule(rng):
    X = rng.standard_normal((5, 20))
    with pytest.raises(ValueError):
        expanding_backtest(X, np.zeros(20), 25, 0.5, 1)
    with pytest.raises(ValueError):
        expanding_backtest(X, np.zeros(20), 10, 0.5, 1, refit_every=0)


def test_single_factor_weights_and_sharpe():
    z = np.random.default_rng(3).standard_normal(400)
    z = (z - z.mean()) / z.std(ddof=1)
    mean = 0.3
    f = mean + z
    w, ridged = mv_weights(f)
    assert w.tolist() == [1.0] and not ridged
    assert sharpe_ratio(f * w[0], periods_per_year=1) == pytest.approx(abs(mean), rel=1e-12)


def test_weights_rotation_invariance(rng):
    F = rng.standard_normal((300, 3)) + np.array([0.1, -0.05, 0.2])
    G = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    w, _ = mv_weights(F)
    wg, _ = mv_weights(F @ G)
    a, b = F @ w, (F @ G) @ wg
    # unit gross exposure rescales by a positive factor only
    scale = (a @ b) / (a @ a)
    assert scale > 0
    assert np.allclose(b, scale * a, atol=1e-10 * np.abs(b).max())
    assert sharpe_ratio(a) == pytest.approx(sharpe_ratio(b), abs=1e-10)


def test_weights_ridge_and_degenerate():
    F = np.column_stack([np.arange(10.0), np.arange(10.0)])
    w, ridged = mv_weights(F)
    assert ridged and np.isfinite(w).all()
    with pytest.raises(SingularFactorCov):
        mv_weights(np.zeros((10, 2)))
    with pytest.raises(ZeroDenominator):
        sharpe_ratio(np.ones(5))


def test_portfolio_runs_and_flags_zero_rate():
    sim = generate_panel(DgpConfig(N=20, T=120, seed=2))
    with pytest.warns(Warning):
        rep = mv_factor_portfolio(sim.X, sim.S, 80, 0.5, 1, refit_every=20)
    assert rep.risk_free_assumed_zero
    assert np.all(rep.times >= 80)
    assert np.array_equal(rep.excess, rep.returns)
    rf = np.full(120, 0.01)
    rep2 = mv_factor_portfolio(sim.X, sim.S, 80, 0.5, 1, refit_every=20, risk_free=rf)
    assert np.allclose(rep2.excess, rep2.returns - 0.01)


def test_variance_shares(rng):
    X = np.outer(rng.standard_normal(10), rng.standard_normal(80))
    S = rng.uniform(-1, 1, 80)
    states, shares = variance_explained_shares(state_sweep(X, S, [-0.5, 0.5], 0.5, 1))
    assert np.allclose(shares, 1.0)

    sim = generate_panel(DgpConfig(N=60, T=400, r=3, seed=1))
    grid = np.linspace(-1, 1.2, 12)
    states, shares = variance_explained_shares(state_sweep(sim.X, sim.S, grid, 0.3, 3))
    assert np.all(np.diff(shares, axis=1) <= 1e-12)
    assert np.all(shares.sum(axis=1) <= 1 + 1e-12)
    assert shares[:, 0].max() - shares[:, 0].min() > 0.01
