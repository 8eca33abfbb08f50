"""Kernel functions and kernel weighting of a state path.

A kernel weight localizes time observations around a target state ``s``:
``w_t = K((S_t - s) / h) / h``.  The sum of the weights is the effective
sample size ``T(s)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import EffectiveSampleTooSmall

KernelKind = Literal["gaussian", "uniform", "epanechnikov", "biweight", "triweight"]

KERNELS: tuple[str, ...] = ("gaussian", "uniform", "epanechnikov", "biweight", "triweight")

DEFAULT_MIN_EFFECTIVE_SIZE = 10.0

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# closed-form int K(u)^2 du
_ROUGHNESS = {
    "gaussian": 1.0 / (2.0 * np.sqrt(np.pi)),
    "uniform": 0.5,
    "epanechnikov": 3.0 / 5.0,
    "biweight": 5.0 / 7.0,
    "triweight": 350.0 / 429.0,
}


def _check_kind(kind: str) -> str:
    if kind not in _ROUGHNESS:
        raise ValueError(f"unknown kernel {kind!r}; expected one of {KERNELS}")
    return kind


def kernel_value(kind: KernelKind, u):
    """Evaluate the kernel ``K(u)``. Works on scalars and arrays."""
    _check_kind(kind)
    u = np.asarray(u, dtype=float)
    if kind == "gaussian":
        out = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    else:
        inside = np.abs(u) <= 1.0
        one_minus = np.where(inside, 1.0 - u * u, 0.0)
        if kind == "uniform":
            out = np.where(inside, 0.5, 0.0)
        elif kind == "epanechnikov":
            out = 0.75 * one_minus
        elif kind == "biweight":
            out = (15.0 / 16.0) * one_minus**2
        else:
            out = (35.0 / 32.0) * one_minus**3
    return float(out) if out.ndim == 0 else out


def kernel_roughness(kind: KernelKind) -> float:
    """Return ``R_K = int K(u)^2 du``."""
    return _ROUGHNESS[_check_kind(kind)]


@dataclass(frozen=True)
class KernelWeights:
    """Weights ``K_s(S_t)`` of every time observation for one target state."""

    values: np.ndarray
    state: float
    bandwidth: float
    kind: str = "gaussian"

    @property
    def effective_size(self) -> float:
        return float(self.values.sum())

    def __len__(self) -> int:
        return self.values.shape[0]


def kernel_weights(
    kind: KernelKind,
    states,
    s: float,
    h: float,
    min_effective_size: float | None = DEFAULT_MIN_EFFECTIVE_SIZE,
) -> KernelWeights:
    """Kernel weights ``K((S_t - s)/h)/h`` of a state path around ``s``.

    Parameters
    ----------
    kind : str
        Kernel name, see :data:`KERNELS`.
    states : array_like, shape (T,)
        Observed state path.
    s : float
        Target state.
    h : float
        Bandwidth, strictly positive.
    min_effective_size : float or None
        Floor on ``T(s)``. ``None`` or ``0`` disables the check.

    Raises
    ------
    EffectiveSampleTooSmall
        If the weights sum below ``min_effective_size``.
    """
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    states = np.asarray(states, dtype=float)
    if states.ndim != 1:
        raise ValueError("states must be a 1-d array")
    if not np.all(np.isfinite(states)):
        raise ValueError("states must be finite")
    values = kernel_value(kind, (states - s) / h) / h
    values = np.atleast_1d(np.asarray(values, dtype=float))
    w = KernelWeights(values=values, state=float(s), bandwidth=float(h), kind=kind)
    if min_effective_size and w.effective_size < min_effective_size:
        raise EffectiveSampleTooSmall(float(s), w.effective_size, float(min_effective_size))
    return w


def density_estimate(weights: KernelWeights, T: int | None = None) -> float:
    """Kernel estimate ``T(s)/T`` of the stationary state density at ``s``."""
    if T is None:
        T = len(weights)
    if T <= 0:
        raise ValueError("T must be positive")
    return weights.effective_size / T
