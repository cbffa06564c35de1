"""Reallocating geometric Brownian motion: N-agent simulation and the
analytic stationary law of rescaled wealth.

Each agent evolves as

    dx_i = x_i (mu dt + sigma dW_i) - tau (x_i - <x>_N) dt

and is integrated with explicit Euler-Maruyama. For tau > 0 the rescaled
wealth y = x / <x>_N settles into an inverse-gamma law with shape zeta and
scale zeta - 1, where zeta = 1 + 2 tau / sigma^2.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaincc, gammaln

from rgbm._noise import step_normals

__all__ = [
    "ModelParams",
    "WealthState",
    "WealthPanel",
    "StationaryDistribution",
    "NoStationaryDistributionError",
    "SimulationDiverged",
    "AgentNoise",
    "zeta_of",
    "em_step",
    "simulate",
    "rescale",
    "stationary_pdf",
    "stationary_cdf",
    "stationary_sample",
]

# relative slack when matching requested times to the dt grid
_GRID_TOL = 1e-9


class NoStationaryDistributionError(ValueError):
    """Raised for tau <= 0, where rescaled wealth has no stationary law."""


class SimulationDiverged(FloatingPointError):
    """Raised when a step produces NaN or Inf wealth (dt is too large)."""


@dataclass(frozen=True)
class ModelParams:
    mu: float
    sigma: float
    tau: float
    n_agents: int
    dt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if int(self.n_agents) != self.n_agents or self.n_agents < 2:
            raise ValueError(f"n_agents must be an integer >= 2, got {self.n_agents}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        object.__setattr__(self, "n_agents", int(self.n_agents))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def sigma_sq(self) -> float:
        return self.sigma**2

    @classmethod
    def from_sigma_sq(cls, sigma_sq: float, **kwargs) -> "ModelParams":
        if not sigma_sq > 0:
            raise ValueError(f"sigma_sq must be > 0, got {sigma_sq}")
        return cls(sigma=math.sqrt(sigma_sq), **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(**{k: d[k] for k in ("mu", "sigma", "tau", "n_agents", "dt", "seed")})


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _mean(x: np.ndarray) -> float:
    # numpy's reduction over a contiguous float64 array is pairwise with a
    # fixed blocking, so the value depends only on x, not on who wrote it
    return float(np.add.reduce(x) / x.size)


@dataclass(frozen=True)
class WealthState:
    t: float
    x: np.ndarray
    mean_x: float
    step: int = 0

    @classmethod
    def initial(cls, x0: np.ndarray, t: float = 0.0, step: int = 0) -> "WealthState":
        x = _freeze(x0)
        return cls(t=t, x=x, mean_x=_mean(x), step=step)


class AgentNoise:
    """Per-agent standard normal stream keyed by (seed, step, agent)."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def normals(self, step: int, lo: int, hi: int) -> np.ndarray:
        return step_normals(self.seed, step, lo, hi)


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def em_step(
    state: WealthState,
    params: ModelParams,
    noise: AgentNoise | None = None,
    *,
    workers: int = 1,
    executor: Executor | None = None,
) -> WealthState:
    """Advance every agent by one Euler-Maruyama step of length ``params.dt``.

    The reallocation term uses the mean of the pre-step state. Agents may be
    split across ``workers`` threads; the result does not depend on the split.
    """
    if noise is None:
        noise = AgentNoise(params.seed)
    x = state.x
    n = x.size
    if n != params.n_agents:
        raise ValueError(f"state has {n} agents, params expect {params.n_agents}")
    dt = params.dt
    drift = params.mu * dt
    vol = params.sigma * math.sqrt(dt)
    pool = params.tau * dt
    m = state.mean_x
    out = np.empty(n)

    def update(lo: int, hi: int) -> None:
        xs = x[lo:hi]
        z = noise.normals(state.step, lo, hi)
        # overflow is reported below as SimulationDiverged
        with np.errstate(over="ignore", invalid="ignore"):
            out[lo:hi] = xs + xs * (drift + vol * z) - pool * (xs - m)

    spans = _chunks(n, workers)
    if len(spans) == 1:
        update(*spans[0])
    elif executor is not None:
        list(executor.map(lambda s: update(*s), spans))
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as ex:
            list(ex.map(lambda s: update(*s), spans))

    if not np.isfinite(out).all():
        raise SimulationDiverged(
            f"non-finite wealth at t={state.t + dt:g} (step {state.step + 1}); "
            f"reduce dt (currently {dt:g})"
        )
    mean_x = _mean(out)
    out.setflags(write=False)
    return WealthState(t=(state.step + 1) * dt, x=out, mean_x=mean_x, step=state.step + 1)


@dataclass(frozen=True)
class WealthPanel:
    params: ModelParams
    times: np.ndarray
    records: np.ndarray
    renormalized: bool = field(default=False)

    def __post_init__(self):
        times = _freeze(self.times)
        records = _freeze(self.records)
        if records.ndim != 2 or records.shape[0] != times.size:
            raise ValueError("records must be a (len(times), N) matrix")
        if records.shape[1] != self.params.n_agents:
            raise ValueError("each record must have exactly n_agents entries")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "records", records)

    def index_of(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=_GRID_TOL, atol=_GRID_TOL))
        if hits.size == 0:
            raise KeyError(f"time {t} is not recorded in this panel")
        return int(hits[0])

    def at(self, t: float) -> np.ndarray:
        return self.records[self.index_of(t)]


def _grid_steps(times: Sequence[float], dt: float, horizon_steps: int) -> list[int]:
    steps = []
    for t in times:
        k = int(round(t / dt))
        if abs(k * dt - t) > _GRID_TOL * max(1.0, abs(t)):
            raise ValueError(f"record time {t} is not a multiple of dt={dt}")
        if k < 0 or k > horizon_steps:
            raise ValueError(f"record time {t} outside [0, horizon]")
        steps.append(k)
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("record times must be strictly increasing")
    return steps


def simulate(
    params: ModelParams,
    horizon: float,
    record_times: Sequence[float] | None = None,
    x0: np.ndarray | str = "uniform-at-1",
    *,
    workers: int = 1,
    renormalize: bool = False,
) -> WealthPanel:
    """Integrate the ensemble from t=0 to ``horizon`` and record snapshots.

    ``record_times`` must lie on the dt grid (default: ``[0, horizon]``).
    With ``renormalize`` the state is divided by ``|<x>|`` whenever the mean
    leaves [1e-100, 1e100]; the dynamics are scale invariant, so only the
    absolute level of the recorded wealth changes.
    """
    dt = params.dt
    n_steps = int(round(horizon / dt))
    if horizon < 0 or abs(n_steps * dt - horizon) > _GRID_TOL * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a nonnegative multiple of dt={dt}")
    if record_times is None:
        record_times = [0.0, horizon] if n_steps else [0.0]
    rec_steps = _grid_steps(record_times, dt, n_steps)

    if isinstance(x0, str):
        if x0 != "uniform-at-1":
            raise ValueError(f"unknown initial condition {x0!r}")
        x_init = np.ones(params.n_agents)
    else:
        x_init = np.asarray(x0, dtype=np.float64)
        if x_init.shape != (params.n_agents,):
            raise ValueError(f"x0 must have shape ({params.n_agents},)")

    noise = AgentNoise(params.seed)
    state = WealthState.initial(x_init)
    records = np.empty((len(rec_steps), params.n_agents))
    slot = {k: i for i, k in enumerate(rec_steps)}
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(n_steps + 1):
            if k in slot:
                records[slot[k]] = state.x
            if k == n_steps or k >= rec_steps[-1]:
                break
            state = em_step(state, params, noise, workers=workers, executor=executor)
            if renormalize and not (1e-100 < abs(state.mean_x) < 1e100):
                scale = abs(state.mean_x)
                state = WealthState.initial(state.x / scale, t=state.t, step=state.step)
    finally:
        if executor is not None:
            executor.shutdown()
    times = [k * dt for k in rec_steps]
    return WealthPanel(params=params, times=np.array(times), records=records, renormalized=renormalize)


def rescale(record: np.ndarray) -> np.ndarray:
    """Divide wealth by its population mean; the result has mean 1."""
    x = np.asarray(record, dtype=np.float64)
    m = _mean(x)
    if m == 0 or not math.isfinite(m):
        raise ValueError("cannot rescale a wealth vector with zero mean")
    y = x / m
    # second pass removes the rounding drift of the first division
    return y / _mean(y)


def zeta_of(tau: float, sigma_sq: float) -> float:
    """Pareto tail exponent of the stationary law, 1 + 2 tau / sigma^2."""
    if not sigma_sq > 0:
        raise ValueError(f"sigma_sq must be > 0, got {sigma_sq}")
    if not tau > 0:
        raise NoStationaryDistributionError(
            f"no stationary distribution for tau={tau} (requires tau > 0)"
        )
    return 1.0 + 2.0 * tau / sigma_sq


@dataclass(frozen=True)
class StationaryDistribution:
    """Inverse-gamma law with shape ``zeta`` and scale ``zeta - 1`` (mean 1)."""

    zeta: float

    def __post_init__(self):
        if not self.zeta > 1:
            raise ValueError(f"zeta must be > 1, got {self.zeta}")

    @classmethod
    def from_params(cls, tau: float, sigma_sq: float) -> "StationaryDistribution":
        return cls(zeta_of(tau, sigma_sq))

    @property
    def mean(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        return 1.0 / (self.zeta - 2.0) if self.zeta > 2 else math.inf

    @property
    def mode(self) -> float:
        return (self.zeta - 1.0) / (self.zeta + 1.0)

    @property
    def tail_constant(self) -> float:
        """Limit of pdf(y) * y**(1 + zeta) as y grows."""
        z = self.zeta
        return math.exp(z * math.log(z - 1.0) - gammaln(z))

    def pdf(self, y):
        return stationary_pdf(y, self)

    def cdf(self, y):
        return stationary_cdf(y, self)

    def sample(self, n: int, rng=None) -> np.ndarray:
        return stationary_sample(n, self, rng)


def stationary_pdf(y, dist: StationaryDistribution):
    y = np.asarray(y, dtype=np.float64)
    if np.any(~(y > 0)):
        raise ValueError("stationary_pdf is defined for y > 0 only")
    z = dist.zeta
    logp = z * math.log(z - 1.0) - gammaln(z) - (z - 1.0) / y - (1.0 + z) * np.log(y)
    out = np.exp(logp)
    return float(out) if out.ndim == 0 else out


def stationary_cdf(y, dist: StationaryDistribution):
    """P(Y <= y) via the regularized upper incomplete gamma Q(zeta, (zeta-1)/y)."""
    y = np.asarray(y, dtype=np.float64)
    z = dist.zeta
    with np.errstate(divide="ignore"):
        arg = np.where(y > 0, (z - 1.0) / np.where(y > 0, y, 1.0), np.inf)
    out = np.where(y > 0, gammaincc(z, arg), 0.0)
    out = np.where(np.isposinf(y), 1.0, out)
    return float(out) if out.ndim == 0 else out


def stationary_sample(n: int, dist: StationaryDistribution, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return (dist.zeta - 1.0) / rng.gamma(dist.zeta, 1.0, size=n)
