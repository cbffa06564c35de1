"""Gumbel copula: evaluation, frailty sampling, Kendall-tau fitting and
copula-implied quantile transition matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import kendalltau

from rgbm.mobility import CrossSectionPair, TransitionMatrix, _matrix_from_vectors

__all__ = [
    "GumbelParam",
    "gumbel_cdf",
    "gumbel_sample",
    "kendall_tau",
    "fit_theta",
    "copula_transition_matrix",
    "positive_stable",
]

# Kendall tau at or above this is treated as perfect dependence
COMONOTONE_TAU = 1.0 - 1e-9


@dataclass(frozen=True)
class GumbelParam:
    """Dependence parameter theta >= 1; ``inf`` is the comonotone sentinel."""

    theta: float

    def __post_init__(self):
        if not self.theta >= 1:
            raise ValueError(f"Gumbel theta must be >= 1, got {self.theta}")

    @property
    def comonotone(self) -> bool:
        return math.isinf(self.theta)

    @property
    def kendall_tau(self) -> float:
        return 1.0 - 1.0 / self.theta


def _theta(theta) -> float:
    t = theta.theta if isinstance(theta, GumbelParam) else float(theta)
    if not t >= 1:
        raise ValueError(f"Gumbel theta must be >= 1, got {t}")
    return t


def gumbel_cdf(u, v, theta):
    """C(u, v) = exp(-[(-ln u)^theta + (-ln v)^theta]^(1/theta))."""
    t = _theta(theta)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any((u <= 0) | (u > 1)) or np.any((v <= 0) | (v > 1)):
        raise ValueError("u and v must lie in (0, 1]")
    lu, lv = -np.log(u), -np.log(v)
    if math.isinf(t):
        out = np.minimum(u, v)
    else:
        out = np.exp(-((lu**t + lv**t) ** (1.0 / t)))
    return float(out) if out.ndim == 0 else out


def positive_stable(alpha: float, n: int, rng) -> np.ndarray:
    """Log of positive alpha-stable draws with Laplace transform exp(-s**alpha).

    Kanter's representation from one uniform angle and one exponential.
    Returned on the log scale since large theta makes the variates overflow.
    """
    rng = np.random.default_rng(rng)
    if alpha == 1.0:
        return np.zeros(n)
    ang = rng.uniform(0.0, math.pi, size=n)
    e = rng.standard_exponential(size=n)
    return (
        np.log(np.sin(alpha * ang))
        - np.log(np.sin(ang)) / alpha
        + (1.0 - alpha) / alpha * (np.log(np.sin((1.0 - alpha) * ang)) - np.log(e))
    )


def gumbel_sample(n: int, theta, rng=None) -> np.ndarray:
    """``n`` pairs (u, v) from the Gumbel copula, shape (n, 2).

    Marshall-Olkin frailty: U_j = exp(-(E_j / V)**(1/theta)) with V positive
    stable of index 1/theta and E_j independent unit exponentials.
    """
    t = _theta(theta)
    rng = np.random.default_rng(rng)
    if math.isinf(t):
        u = rng.uniform(size=n)
        return np.column_stack([u, u])
    alpha = 1.0 / t
    log_v = positive_stable(alpha, n, rng)
    e = rng.standard_exponential(size=(n, 2))
    return np.exp(-np.exp(alpha * (np.log(e) - log_v[:, None])))


def kendall_tau(a, b) -> float:
    res = kendalltau(a, b)
    return float(res.statistic)


def fit_theta(pair: CrossSectionPair) -> GumbelParam:
    """Invert Kendall's tau: theta = 1 / (1 - tau_K), clamped to [1, inf)."""
    if pair.n < 10:
        raise ValueError(f"fit_theta needs N >= 10, got {pair.n}")
    if np.ptp(pair.x_early) == 0 or np.ptp(pair.x_late) == 0:
        raise ValueError("fit_theta: degenerate ranks (a cross-section is constant)")
    tk = kendall_tau(pair.x_early, pair.x_late)
    if not math.isfinite(tk):
        raise ValueError("fit_theta: Kendall's tau is undefined for these data")
    if tk >= COMONOTONE_TAU:
        return GumbelParam(math.inf)
    if tk <= 0:
        return GumbelParam(1.0)
    return GumbelParam(1.0 / (1.0 - tk))


def copula_transition_matrix(theta, q: int, n: int, rng=None) -> TransitionMatrix:
    """Quantile transition matrix of ``n`` Gumbel pairs binned on each margin."""
    if n < 10 * q * q:
        raise ValueError(f"need n >= 10*q^2 = {10 * q * q}, got n={n}")
    uv = gumbel_sample(n, theta, rng)
    return _matrix_from_vectors(uv[:, 0], uv[:, 1], q)
