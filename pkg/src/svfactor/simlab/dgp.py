"""Simulated panels with state-dependent loadings and known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..errors import SingularEigenvalue
from ..estimator import ConditionalFit

STATE_MODELS = ("ou", "uniform01", "two_state_ou")
LOADING_MODELS = ("cubic", "constant", "break_linear", "break_quadratic", "exp_two_state")
ERROR_MODELS = ("iid", "heteroskedastic", "cross_dependent")


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


@dataclass(frozen=True)
class DgpConfig:
    """Monte Carlo design.

    ``noise_on_state`` is the multiplier ``c`` of the observed state
    ``G = S + c v``; ``error_scale`` multiplies every error draw (0 gives a
    noiseless panel).
    """

    N: int = 100
    T: int = 500
    r: int = 1
    state_model: str = "ou"
    loading_model: str = "cubic"
    error_model: str = "iid"
    noise_on_state: float = 0.0
    seed: int = 0
    theta: float = 1.0
    mu: float = 0.2
    sigma: float = 1.0
    break_point: float = 0.3
    het_low: float = 0.5
    het_high: float = 1.5
    cross_rho: float = 0.5
    error_scale: float = 1.0

    def __post_init__(self):
        if not (self.N >= self.r >= 1 and self.T >= self.r):
            raise ValueError(f"need N, T >= r >= 1, got N={self.N}, T={self.T}, r={self.r}")
        if self.state_model not in STATE_MODELS:
            raise ValueError(f"unknown state model {self.state_model!r}")
        if self.loading_model not in LOADING_MODELS:
            raise ValueError(f"unknown loading model {self.loading_model!r}")
        if self.error_model not in ERROR_MODELS:
            raise ValueError(f"unknown error model {self.error_model!r}")
        if self.theta <= 0 or self.sigma <= 0:
            raise ValueError("theta and sigma must be positive")
        if self.error_scale < 0 or self.noise_on_state < 0:
            raise ValueError("scales must be nonnegative")
        if not 0 < self.het_low <= self.het_high:
            raise ValueError("need 0 < het_low <= het_high")
        if not -1 < self.cross_rho < 1:
            raise ValueError("cross_rho must lie in (-1, 1)")
        if (self.loading_model == "exp_two_state") != (self.state_model == "two_state_ou"):
            raise ValueError("exp_two_state loadings require the two_state_ou state model and vice versa")

    def with_(self, **kw) -> "DgpConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class SimPanel:
    """A generated panel together with every piece used to build it."""

    config: DgpConfig
    X: np.ndarray
    S: np.ndarray
    G: np.ndarray
    true_factors: np.ndarray
    true_common: np.ndarray
    errors: np.ndarray
    coefficients: tuple = field(repr=False)
    S2: np.ndarray | None = None
    _loading_fn: Callable = field(repr=False, default=None)

    def true_loading_at(self, s: float, s2: float | None = None) -> np.ndarray:
        """True loadings ``Lambda(s)`` as an (N, r) matrix.

        For the two-state design ``s2`` defaults to the mean of the second state.
        """
        return self._loading_fn(s, s2)

    def loading_path(self) -> np.ndarray:
        """Loadings at every realized state, shape (T, N, r)."""
        if self.S2 is None:
            return np.stack([self._loading_fn(s, None) for s in self.S])
        return np.stack([self._loading_fn(a, b) for a, b in zip(self.S, self.S2)])


def simulate_ou_state(T: int, theta: float = 1.0, mu: float = 0.2, sigma: float = 1.0,
                      seed=0, rng: np.random.Generator | None = None) -> np.ndarray:
    """OU path sampled at unit spacing with the exact Gaussian transition.

    The first value is drawn from the stationary law ``N(mu, sigma^2/(2 theta))``.
    """
    if theta <= 0 or sigma <= 0:
        raise ValueError("theta and sigma must be positive")
    if rng is None:
        rng = rng_for(seed)
    a = np.exp(-theta)
    step_sd = sigma * np.sqrt((1.0 - np.exp(-2.0 * theta)) / (2.0 * theta))
    z = rng.standard_normal(T)
    out = np.empty(T)
    out[0] = mu + sigma / np.sqrt(2.0 * theta) * z[0]
    for t in range(1, T):
        out[t] = mu + a * (out[t - 1] - mu) + step_sd * z[t]
    return out


def _loading_function(cfg: DgpConfig, coef: tuple) -> Callable:
    m = cfg.loading_model
    s0 = cfg.break_point
    if m == "cubic":
        L0, L1, L2, L3 = coef
        return lambda s, _=None: L0 + 0.5 * s * L1 + 0.25 * s**2 * L2 + 0.125 * s**3 * L3
    if m == "constant":
        (L0,) = coef
        return lambda s, _=None: L0.copy()
    if m == "break_linear":
        L1, L2 = coef
        return lambda s, _=None: L1 + (s <= s0) * (s - s0) * L2
    if m == "break_quadratic":
        L1, L2, L3 = coef
        return lambda s, _=None: L1 + (s <= s0) * ((s - s0) * L2 + (s - s0) ** 2 * L3)
    L1, L2 = coef
    return lambda s, s2=None: np.exp(L1 * s + L2 * (cfg.mu if s2 is None else s2))


_N_COEF = {"cubic": 4, "constant": 1, "break_linear": 2, "break_quadratic": 3, "exp_two_state": 2}


def _errors(cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    N, T = cfg.N, cfg.T
    if cfg.error_model == "iid":
        e = rng.standard_normal((N, T))
    elif cfg.error_model == "heteroskedastic":
        sig = rng.uniform(cfg.het_low, cfg.het_high, size=N)
        e = sig[:, None] * rng.standard_normal((N, T))
    else:
        # AR(1) across the cross-section has covariance rho^|i-j| exactly
        z = rng.standard_normal((N, T))
        e = np.empty((N, T))
        e[0] = z[0]
        c = np.sqrt(1.0 - cfg.cross_rho**2)
        for i in range(1, N):
            e[i] = cfg.cross_rho * e[i - 1] + c * z[i]
    return cfg.error_scale * e


def generate_errors(cfg: DgpConfig, rep: int = 0, draw: int = 0) -> np.ndarray:
    """Error matrix for replication ``rep``; ``draw`` indexes redraws with a fixed design."""
    return _errors(cfg, rng_for(cfg.seed, rep, 1, draw))


def generate_panel(cfg: DgpConfig, rep: int = 0, error_draw: int = 0) -> SimPanel:
    """Draw state, loadings, factors and errors; ``X = Lambda(S_t) F_t + e_t``.

    Substreams are keyed by ``(seed, rep, component)`` so a design (state,
    loadings, factors) can be held fixed while ``error_draw`` varies.
    """
    N, T, r = cfg.N, cfg.T, cfg.r
    rs = rng_for(cfg.seed, rep, 0, 0)
    rl = rng_for(cfg.seed, rep, 0, 1)
    rf = rng_for(cfg.seed, rep, 0, 2)
    rv = rng_for(cfg.seed, rep, 0, 3)

    S2 = None
    if cfg.state_model == "ou":
        S = simulate_ou_state(T, cfg.theta, cfg.mu, cfg.sigma, rng=rs)
    elif cfg.state_model == "uniform01":
        S = rs.uniform(0.0, 1.0, size=T)
    else:
        S = simulate_ou_state(T, cfg.theta, cfg.mu, cfg.sigma, rng=rs)
        S2 = simulate_ou_state(T, cfg.theta, cfg.mu, cfg.sigma, rng=rs)

    coef = tuple(rl.standard_normal((N, r)) for _ in range(_N_COEF[cfg.loading_model]))
    fn = _loading_function(cfg, coef)
    F = rf.standard_normal((T, r))

    if S2 is None:
        path = np.stack([fn(s) for s in S])
    else:
        path = np.stack([fn(a, b) for a, b in zip(S, S2)])
    C = np.einsum("tir,tr->it", path, F)
    e = generate_errors(cfg, rep, error_draw)
    G = S + cfg.noise_on_state * rv.standard_normal(T) if cfg.noise_on_state > 0 else S.copy()
    return SimPanel(cfg, C + e, S, G, F, C, e, coef, S2, fn)


def local_loadings(sim: SimPanel, fit: ConditionalFit) -> np.ndarray:
    """Kernel-weighted least-squares target of the loadings at ``fit.s``.

    Row i solves ``min_b sum_t w_t (Lambda_i(S_t)' F_t - b' F_t)^2``; it is
    what the estimator recovers at a finite bandwidth and tends to
    ``Lambda_i(s)`` as ``h`` shrinks.
    """
    w = fit.sqrt_weights**2
    F = sim.true_factors
    A = np.einsum("t,tk,tl->kl", w, F, F)
    rhs = np.einsum("t,tk,tl,til->ik", w, F, F, sim.loading_path())
    return np.linalg.solve(A, rhs.T).T


def rotation_h(sim: SimPanel, fit: ConditionalFit, loadings: np.ndarray | None = None) -> np.ndarray:
    """``H = (L'L/N) (F^s' Fhat^s / T(s)) V^-1`` from ground truth and a fit.

    ``L`` defaults to the true loadings at ``fit.s``.
    """
    V = fit.eigenvalues
    if np.any(V <= 0):
        raise SingularEigenvalue("non-positive eigenvalue in the fit")
    L = sim.true_loading_at(fit.s) if loadings is None else loadings
    Fs = sim.true_factors * fit.sqrt_weights[:, None]
    return (L.T @ L / sim.config.N) @ (Fs.T @ fit.projected_factors / fit.effective_size) / V
