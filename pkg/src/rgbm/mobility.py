"""Rank correlation, earnings elasticity and quantile transition matrices
computed on two cross-sections of the same population."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "CrossSectionPair",
    "TransitionMatrix",
    "IGEEstimate",
    "rank_transform",
    "spearman",
    "ige",
    "transition_matrix",
    "quantile_labels",
]


@dataclass(frozen=True)
class CrossSectionPair:
    """Wealth of the same N individuals at t_m (early) and t_n = t_m + delta."""

    x_early: np.ndarray
    x_late: np.ndarray
    delta: float

    def __post_init__(self):
        early = np.asarray(self.x_early, dtype=np.float64)
        late = np.asarray(self.x_late, dtype=np.float64)
        if early.ndim != 1 or early.shape != late.shape:
            raise ValueError("cross-sections must be 1-d vectors of equal length")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        object.__setattr__(self, "x_early", early)
        object.__setattr__(self, "x_late", late)

    @property
    def n(self) -> int:
        return self.x_early.size


@dataclass(frozen=True)
class TransitionMatrix:
    q: int
    a: np.ndarray
    counts: np.ndarray

    def row_sums(self) -> np.ndarray:
        return self.a.sum(axis=1)


@dataclass(frozen=True)
class IGEEstimate:
    value: float
    n_effective: int
    retained_fraction: float


def rank_transform(v) -> np.ndarray:
    """Ranks 1..N ascending; tied values share their average rank."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("rank_transform needs a nonempty vector")
    return rankdata(v, method="average")


def spearman(pair: CrossSectionPair) -> float:
    n = pair.n
    if n < 2:
        raise ValueError("spearman needs at least 2 individuals")
    r1 = rank_transform(pair.x_early)
    r2 = rank_transform(pair.x_late)
    tied = np.unique(r1).size < n or np.unique(r2).size < n
    if not tied:
        # integer ranks: the squared differences sum exactly
        d = (r1 - r2).astype(np.int64)
        return 1.0 - 6.0 * float(np.dot(d, d)) / (n * (n * n - 1.0))
    c1 = r1 - r1.mean()
    c2 = r2 - r2.mean()
    s11 = float(np.dot(c1, c1))
    s22 = float(np.dot(c2, c2))
    if s11 == 0 or s22 == 0:
        raise ValueError("rank correlation undefined: a cross-section is constant")
    return float(np.dot(c1, c2) / np.sqrt(s11 * s22))


def ige(pair: CrossSectionPair) -> IGEEstimate:
    """OLS slope of log x_late on log x_early over agents positive at both times."""
    keep = (pair.x_early > 0) & (pair.x_late > 0)
    m = int(keep.sum())
    if m < 2:
        raise ValueError(f"ige needs >= 2 agents positive at both times, found {m}")
    le = np.log(pair.x_early[keep])
    ll = np.log(pair.x_late[keep])
    ce = le - le.mean()
    var = float(np.dot(ce, ce))
    if var == 0:
        raise ValueError("ige undefined: log wealth at the early time has zero variance")
    b = float(np.dot(ce, ll - ll.mean()) / var)
    return IGEEstimate(value=b, n_effective=m, retained_fraction=m / pair.n)


def quantile_labels(v, q: int) -> np.ndarray:
    """Quantile index 0..q-1 for each entry, by ascending rank.

    Ties keep index order. When q does not divide N, the first N mod q
    quantiles (the lowest) each take one extra member.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    base, extra = divmod(n, q)
    sizes = np.full(q, base)
    sizes[:extra] += 1
    labels = np.empty(n, dtype=np.int64)
    labels[np.argsort(v, kind="stable")] = np.repeat(np.arange(q), sizes)
    return labels


def _matrix_from_vectors(early, late, q: int) -> TransitionMatrix:
    q = int(q)
    n = np.asarray(early).size
    if q < 2:
        raise ValueError(f"need at least 2 quantiles, got q={q}")
    if n < q:
        raise ValueError(f"need N >= q, got N={n}, q={q}")
    k = quantile_labels(early, q)
    l = quantile_labels(late, q)
    counts = np.bincount(k * q + l, minlength=q * q).reshape(q, q)
    a = counts / counts.sum(axis=1, keepdims=True)
    counts.setflags(write=False)
    a.setflags(write=False)
    return TransitionMatrix(q=q, a=a, counts=counts)


def transition_matrix(pair: CrossSectionPair, q: int) -> TransitionMatrix:
    """Row-stochastic matrix a[k, l] = P(quantile l at t_n | quantile k at t_m)."""
    return _matrix_from_vectors(pair.x_early, pair.x_late, q)
