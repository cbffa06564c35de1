"""Total variational distance to the stationary law, relaxation-rate
fitting and the typical-individual tracking procedure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from rgbm.core import StationaryDistribution, WealthPanel, rescale

__all__ = [
    "HistogramSpec",
    "BetaCurve",
    "Plateau",
    "RelaxationFit",
    "FitRefused",
    "tvd",
    "beta_curve",
    "select_typical_subsample",
    "detect_plateau",
    "fit_relaxation",
    "theoretical_relaxation_time",
    "mixing_index",
    "chi_square_pvalue",
    "significance_onset",
]


class FitRefused(ValueError):
    """Too few pre-plateau observations to fit a decay rate."""


@dataclass(frozen=True)
class HistogramSpec:
    """Bin edges in rescaled wealth plus open-ended buckets below and above.

    Bins are half-open ``[lo, hi)``. The underflow bucket also collects zero
    and negative wealth. A disabled bucket is dropped from the distance, but
    its sample mass still counts toward the normalisation.
    """

    bin_edges: np.ndarray = field(default_factory=lambda: np.logspace(-3.0, 3.0, 51))
    underflow: bool = True
    overflow: bool = True

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=np.float64)
        if e.ndim != 1 or e.size < 2:
            raise ValueError("need at least two bin edges")
        if not np.all(e > 0) or not np.all(np.diff(e) > 0):
            raise ValueError("bin edges must be positive and strictly increasing")
        e.setflags(write=False)
        object.__setattr__(self, "bin_edges", e)

    @classmethod
    def log_spaced(cls, n_bins: int = 50, lo: float = 1e-3, hi: float = 1e3) -> "HistogramSpec":
        return cls(np.logspace(math.log10(lo), math.log10(hi), n_bins + 1))

    @property
    def _keep(self) -> np.ndarray:
        keep = np.ones(self.bin_edges.size + 1, dtype=bool)
        keep[0] = self.underflow
        keep[-1] = self.overflow
        return keep

    @property
    def n_buckets(self) -> int:
        return int(self._keep.sum())

    def probabilities(self, target: StationaryDistribution) -> np.ndarray:
        c = target.cdf(self.bin_edges)
        p = np.concatenate([[c[0]], np.diff(c), [1.0 - c[-1]]])
        return p[self._keep]

    def counts(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        idx = np.searchsorted(self.bin_edges, y, side="right")
        return np.bincount(idx, minlength=self.bin_edges.size + 1)[self._keep]


DEFAULT_SPEC = HistogramSpec()


def tvd(sample, target: StationaryDistribution, spec: HistogramSpec = DEFAULT_SPEC) -> float:
    """L1 distance between the binned sample and the binned target, in [0, 2]."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.size == 0:
        raise ValueError("tvd needs a nonempty sample")
    return _tvd_counts(spec.counts(sample), sample.size, spec.probabilities(target))


def _tvd_counts(counts: np.ndarray, n: int, probs: np.ndarray) -> float:
    return float(np.abs(counts / n - probs).sum())


@dataclass(frozen=True)
class BetaCurve:
    times: np.ndarray
    beta: np.ndarray
    k: int
    counts: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        if t.shape != b.shape or t.ndim != 1:
            raise ValueError("times and beta must be 1-d of equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if np.any((b < 0) | (b > 2 + 1e-12)):
            raise ValueError("beta values must lie in [0, 2]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "beta", b)

    def __len__(self) -> int:
        return self.times.size


def select_typical_subsample(record, k: int) -> np.ndarray:
    """Indices of the ``k`` agents closest to the mean wealth (ties: lower index)."""
    x = np.asarray(record, dtype=np.float64)
    if k <= 0:
        raise ValueError(f"subsample size must be positive, got {k}")
    if k > x.size:
        raise ValueError(f"subsample size {k} exceeds population {x.size}")
    dist = np.abs(x - x.mean())
    return np.sort(np.argsort(dist, kind="stable")[:k])


def beta_curve(
    panel: WealthPanel,
    target: StationaryDistribution,
    spec: HistogramSpec = DEFAULT_SPEC,
    subsample: Sequence[int] | np.ndarray | str = "all",
) -> BetaCurve:
    """Distance of the tracked subsample to ``target`` at every recorded time.

    Wealth is rescaled by the whole-population mean before the subsample is
    taken, so the subsample is observed inside the economy.
    """
    if panel.times.size == 0:
        raise ValueError("panel has no observations")
    n = panel.params.n_agents
    if isinstance(subsample, str):
        if subsample != "all":
            raise ValueError(f"unknown subsample selector {subsample!r}")
        idx = None
        k = n
    else:
        idx = np.asarray(subsample, dtype=np.int64)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
            raise IndexError("subsample indices out of range")
        k = idx.size
    probs = spec.probabilities(target)
    counts = np.empty((panel.times.size, probs.size), dtype=np.int64)
    beta = np.empty(panel.times.size)
    for i, rec in enumerate(panel.records):
        y = rescale(rec)
        if idx is not None:
            y = y[idx]
        counts[i] = spec.counts(y)
        beta[i] = _tvd_counts(counts[i], k, probs)
    counts.setflags(write=False)
    return BetaCurve(times=panel.times, beta=beta, k=k, counts=counts)


def _ols(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    """slope, intercept, slope standard error, r^2."""
    tc = t - t.mean()
    sxx = float(np.dot(tc, tc))
    slope = float(np.dot(tc, y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * t.mean())
    resid = y - (intercept + slope * t)
    ssr = float(np.dot(resid, resid))
    dof = t.size - 2
    se = math.sqrt(ssr / dof / sxx) if dof > 0 else math.inf
    yc = y - y.mean()
    sst = float(np.dot(yc, yc))
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    return slope, intercept, se, r2


def _log_beta(beta: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(beta, np.finfo(float).tiny))


@dataclass(frozen=True)
class Plateau:
    onset_index: int | None
    onset_time: float
    level: float


def _decay_start(beta: np.ndarray, drop: float = 0.9) -> int | None:
    # a point mass sits inside one bin until it spreads, so the distance is
    # flat for a while at t=0; that lag is not a plateau
    below = np.flatnonzero(beta < drop * beta[0])
    return int(below[0]) if below.size else None


def detect_plateau(curve: BetaCurve, window: int = 10, level: float = 0.95) -> Plateau:
    """First sliding window whose log-beta slope interval contains zero.

    The search begins once beta has fallen below 90% of its initial value.
    A curve that never falls that far has no plateau.
    """
    n = len(curve)
    if window < 3:
        raise ValueError("plateau window needs at least 3 observations")
    start = _decay_start(curve.beta)
    if start is None:
        return Plateau(None, math.nan, math.nan)
    logb = _log_beta(curve.beta)
    tcrit = stats.t.ppf(0.5 + level / 2, window - 2)
    for s in range(start, n - window + 1):
        sl = slice(s, s + window)
        slope, _, se, _ = _ols(curve.times[sl], logb[sl])
        if abs(slope) <= tcrit * se:
            return Plateau(s, float(curve.times[s]), float(np.median(curve.beta[s:])))
    return Plateau(None, math.nan, math.nan)


@dataclass(frozen=True)
class RelaxationFit:
    rate: float
    relaxation_time: float
    window: tuple[float, float]
    r_squared: float
    plateau_level: float
    plateau_onset: float
    rate_ci: tuple[float, float] = (math.nan, math.nan)
    n_points: int = 0
    mixing: bool = True

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "relaxation_time": self.relaxation_time,
            "window": list(self.window),
            "r_squared": self.r_squared,
            "plateau_level": self.plateau_level,
            "plateau_onset": self.plateau_onset,
            "rate_ci": list(self.rate_ci),
            "n_points": self.n_points,
            "mixing": self.mixing,
        }


def _no_mixing(curve: BetaCurve, plateau: Plateau, window=(math.nan, math.nan), r2=math.nan, n=0):
    return RelaxationFit(
        rate=0.0,
        relaxation_time=math.inf,
        window=window,
        r_squared=r2,
        plateau_level=plateau.level,
        plateau_onset=plateau.onset_time,
        n_points=n,
        mixing=False,
    )


def fit_relaxation(
    curve: BetaCurve,
    window: int = 10,
    min_points: int = 10,
    level: float = 0.95,
) -> RelaxationFit:
    """Exponential decay rate of beta(t) before the finite-sample plateau.

    The fit runs from the first observation up to one plateau window before
    the plateau onset. A curve that never decreases significantly, or that
    rises significantly after its apparent plateau, is reported as not
    mixing (rate 0, infinite relaxation time).
    """
    n = len(curve)
    if n < min_points:
        raise FitRefused(f"curve has {n} points, need >= {min_points}")
    plateau = detect_plateau(curve, window, level)
    if _decay_start(curve.beta) is None or plateau.onset_index == 0:
        return _no_mixing(curve, plateau)
    if plateau.onset_index is not None and _rises_after(curve, plateau.onset_index, level):
        return _no_mixing(curve, plateau)
    end = n if plateau.onset_index is None else plateau.onset_index - window
    if end < min_points:
        raise FitRefused(
            f"only {max(end, 0)} observations precede the plateau window, need >= {min_points}"
        )
    t = curve.times[:end]
    logb = _log_beta(curve.beta[:end])
    slope, _, se, r2 = _ols(t, logb)
    tcrit = stats.t.ppf(0.5 + level / 2, end - 2)
    lo, hi = -slope - tcrit * se, -slope + tcrit * se
    win = (float(t[0]), float(t[-1]))
    if not lo > 0:
        return _no_mixing(curve, plateau, win, r2, end)
    rate = -slope
    return RelaxationFit(
        rate=rate,
        relaxation_time=1.0 / rate,
        window=win,
        r_squared=r2,
        plateau_level=plateau.level,
        plateau_onset=plateau.onset_time,
        rate_ci=(lo, hi),
        n_points=end,
    )


def _rises_after(curve: BetaCurve, onset: int, level: float) -> bool:
    # a diverging distance climbs back above where the decay stopped
    tail_t = curve.times[onset:]
    if tail_t.size < 3:
        return False
    tail = _log_beta(curve.beta[onset:])
    slope, _, se, _ = _ols(tail_t, tail)
    tcrit = stats.t.ppf(0.5 + level / 2, tail_t.size - 2)
    climb = slope * (tail_t[-1] - tail_t[0])
    return slope - tcrit * se > 0 and climb > math.log(2.0)


def theoretical_relaxation_time(tau: float) -> float:
    """1/tau in the mixing regime; infinite for tau <= 0."""
    return 1.0 / tau if tau > 0 else math.inf


def mixing_index(relaxation_time: float) -> float:
    """Normalised index w = exp(-relaxation_time): 0 for no mixing, 1 for instant."""
    if math.isnan(relaxation_time) or relaxation_time < 0:
        raise ValueError(f"relaxation time must be >= 0, got {relaxation_time}")
    return math.exp(-relaxation_time)


def _merge_for_chi2(observed: np.ndarray, expected: np.ndarray, min_expected: float = 5.0):
    obs_groups, exp_groups = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_groups.append(o_acc)
            exp_groups.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_groups:
            obs_groups[-1] += o_acc
            exp_groups[-1] += e_acc
        else:
            obs_groups.append(o_acc)
            exp_groups.append(e_acc)
    return np.array(obs_groups), np.array(exp_groups)


def chi_square_pvalue(counts, n: int, probs) -> float:
    """Goodness-of-fit p-value with adjacent buckets merged to expected >= 5."""
    counts = np.asarray(counts, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    rest_p = max(0.0, 1.0 - float(probs.sum()))
    rest_c = n - float(counts.sum())
    if rest_p > 0 or rest_c > 0:
        counts = np.append(counts, rest_c)
        probs = np.append(probs, rest_p)
    obs, exp = _merge_for_chi2(counts, n * probs)
    if obs.size < 2:
        return 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(exp > 0, (obs - exp) ** 2 / exp, np.where(obs > 0, np.inf, 0.0))
    return float(stats.chi2.sf(terms.sum(), obs.size - 1))


def significance_onset(
    curve: BetaCurve,
    target: StationaryDistribution,
    spec: HistogramSpec = DEFAULT_SPEC,
    alpha: float = 0.05,
    run: int = 5,
) -> float:
    """First time from which ``run`` consecutive chi-square tests accept ``target``.

    Serves as an upper bound on the relaxation time. Returns ``math.inf``
    when the subsample is not mixed within the observed horizon.
    """
    if curve.counts is None:
        raise ValueError("significance_onset needs a curve with per-time bucket counts")
    probs = spec.probabilities(target)
    if curve.counts.shape[1] != probs.size:
        raise ValueError("curve counts do not match the histogram spec")
    accept = np.array([chi_square_pvalue(c, curve.k, probs) >= alpha for c in curve.counts])
    streak = 0
    for i in range(accept.size - 1, -1, -1):
        streak = streak + 1 if accept[i] else 0
        accept[i] = streak >= run
    hits = np.flatnonzero(accept)
    return float(curve.times[hits[0]]) if hits.size else math.inf
