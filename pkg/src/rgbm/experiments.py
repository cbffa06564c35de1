"""Experiment presets that regenerate the figure data as CSV.

Every run derives its own seed from (master seed, sweep index, repetition
index), so results do not depend on how runs are spread over workers.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rgbm import io
from rgbm.copula import copula_transition_matrix, fit_theta
from rgbm.core import ModelParams, StationaryDistribution, simulate
from rgbm.mixing import (
    BetaCurve,
    FitRefused,
    RelaxationFit,
    beta_curve,
    detect_plateau,
    fit_relaxation,
    select_typical_subsample,
)
from rgbm.mobility import CrossSectionPair, ige, spearman, transition_matrix

PRESETS = ("fig1", "fig2", "fig3", "figA2")

_PRESET_DEFAULTS: dict[str, dict] = {
    "fig1": {
        "tau_grid": [0.005, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1],
        "sigma_sq_grid": [0.005, 0.01, 0.02],
    },
    "fig2": {
        "tau_grid": [0.01, 0.02, 0.04, 0.06, 0.08, 0.1],
        "sigma_sq_grid": [0.005, 0.01, 0.02],
        "repetitions": 5,
    },
    "fig3": {
        "tau_grid": [-0.1, -0.08, -0.06, -0.04, -0.02, -0.01, -0.005],
        "sigma_sq_grid": [0.005, 0.01, 0.02],
        "tau": -0.02,
    },
    "figA2": {
        "tau_grid": [0.02, 0.04],
        "sigma_sq_grid": [0.005, 0.01, 0.02],
        "subsample_sizes": [100, 1000],
    },
}


@dataclass
class ExperimentConfig:
    preset: str = "fig1"
    # model parameters shared by every run (tau/sigma_sq pick the single
    # matrix run of fig2/fig3; sweeps use the grids)
    mu: float = 0.0
    tau: float = 0.02
    sigma_sq: float = 0.01
    n_agents: int = 10_000
    dt: float = 0.1
    seed: int = 0
    tau_grid: list[float] = field(default_factory=lambda: [0.02])
    sigma_sq_grid: list[float] = field(default_factory=lambda: [0.01])
    subsample_sizes: list[int] = field(default_factory=lambda: [100, 1000])
    delta: float = 20.0
    q: int = 10
    repetitions: int = 20
    out: str = "out"
    workers: int = 1
    warmup_factor: float = 5.0
    warmup_cap: float = 2000.0
    horizon_factor: float = 6.0
    obs_per_relaxation: int = 50
    plateau_window: int = 10
    paper_scale: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        for name in ("tau_grid", "sigma_sq_grid", "subsample_sizes"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.q < 2:
            raise ValueError(f"q must be >= 2, got {self.q}")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if any(s <= 0 for s in self.sigma_sq_grid) or self.sigma_sq <= 0:
            raise ValueError("sigma_sq values must be > 0")
        if self.preset in ("fig1", "fig2", "figA2") and any(t <= 0 for t in self.tau_grid):
            raise ValueError(f"{self.preset} needs tau > 0 throughout tau_grid")
        if self.preset == "fig3" and any(t >= 0 for t in self.tau_grid):
            raise ValueError("fig3 needs tau < 0 throughout tau_grid")
        if self.preset == "figA2" and any(k < 1 or k > self.n_agents for k in self.subsample_sizes):
            raise ValueError("subsample sizes must lie in [1, n_agents]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def for_preset(cls, preset: str, overrides: dict | None = None) -> "ExperimentConfig":
        """Preset defaults, then ``overrides`` (config file, then flags)."""
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        values = {"preset": preset, **_PRESET_DEFAULTS[preset]}
        overrides = dict(overrides or {})
        if overrides.get("paper_scale"):
            values["repetitions"] = 1000
            if preset == "figA2":
                values["n_agents"] = 100_000
        values.update(overrides)
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    @classmethod
    def from_json(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            doc = json.load(fh)
        preset = (overrides or {}).get("preset") or doc.get("preset", "fig1")
        merged = {**doc, **(overrides or {}), "preset": preset}
        return cls.for_preset(preset, merged)

    def params(self, tau: float, sigma_sq: float, seed: int) -> ModelParams:
        return ModelParams.from_sigma_sq(
            sigma_sq, mu=self.mu, tau=tau, n_agents=self.n_agents, dt=self.dt, seed=seed
        )

    def warmup(self, tau: float) -> float:
        if tau <= 0:
            return 0.0
        return min(self.warmup_factor / tau, self.warmup_cap)


def derive_seed(master: int, *path: int) -> int:
    """64-bit seed for the run at ``path`` (sweep index, repetition index)."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(p) for p in path))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def _on_grid(t: float, dt: float) -> int:
    return int(round(t / dt))


def _run_all(fn: Callable, tasks: Sequence[tuple], workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, *zip(*tasks)))


# -- window measurements ------------------------------------------------------


@dataclass
class WindowSeries:
    """Mobility measures over successive delta-windows of one run."""

    tau: float
    sigma_sq: float
    t_start: np.ndarray
    rho: np.ndarray
    ige: np.ndarray
    ige_n: np.ndarray
    theta: np.ndarray
    last_pair: CrossSectionPair | None = None


def window_series(
    params: ModelParams,
    sigma_sq: float,
    start: float,
    delta: float,
    n_windows: int,
    with_theta: bool = False,
    keep_last_pair: bool = False,
) -> WindowSeries:
    """Simulate to ``start`` and measure ``n_windows`` consecutive windows."""
    dt = params.dt
    k0 = _on_grid(start, dt)
    kd = _on_grid(delta, dt)
    if kd < 1:
        raise ValueError("delta must span at least one step")
    steps = [k0 + j * kd for j in range(n_windows + 1)]
    panel = simulate(
        params,
        steps[-1] * dt,
        [k * dt for k in steps],
        renormalize=params.tau <= 0,
    )
    rho = np.empty(n_windows)
    b = np.empty(n_windows)
    bn = np.empty(n_windows, dtype=np.int64)
    th = np.full(n_windows, np.nan)
    pair = None
    for j in range(n_windows):
        pair = CrossSectionPair(panel.records[j], panel.records[j + 1], delta)
        rho[j] = spearman(pair)
        try:
            est = ige(pair)
            b[j], bn[j] = est.value, est.n_effective
        except ValueError:
            b[j], bn[j] = np.nan, 0
        if with_theta:
            th[j] = fit_theta(pair).theta
    return WindowSeries(
        tau=params.tau,
        sigma_sq=sigma_sq,
        t_start=panel.times[:-1].copy(),
        rho=rho,
        ige=b,
        ige_n=bn,
        theta=th,
        last_pair=pair if keep_last_pair else None,
    )


def _log_over(v: float, delta: float) -> float:
    return math.log(v) / delta if v > 0 else math.nan


def regression_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def _sweep_task(cfg_d: dict, tau: float, sigma_sq: float, seed: int, start: float, with_theta: bool):
    cfg = ExperimentConfig(**cfg_d)
    params = cfg.params(tau, sigma_sq, seed)
    return window_series(params, sigma_sq, start, cfg.delta, cfg.repetitions, with_theta)


def _sweep(cfg: ExperimentConfig, with_theta: bool = False) -> list[WindowSeries]:
    tasks = []
    idx = 0
    for sigma_sq in cfg.sigma_sq_grid:
        for tau in cfg.tau_grid:
            # non-mixing runs start at the point mass; skip the window that
            # begins there because all ranks are tied at t=0
            start = cfg.warmup(tau) if tau > 0 else cfg.delta
            tasks.append((asdict(cfg), tau, sigma_sq, derive_seed(cfg.seed, idx, 0), start, with_theta))
            idx += 1
    return _run_all(_sweep_task, tasks, cfg.workers)


def _summary_rows(series: list[WindowSeries], delta: float):
    for s in series:
        yield (
            s.tau,
            s.sigma_sq,
            _log_over(float(np.mean(s.rho)), delta),
            _log_over(float(np.nanmean(s.ige)) if np.isfinite(s.ige).any() else math.nan, delta),
        )


def _window_rows(series: list[WindowSeries]):
    for s in series:
        for j in range(s.rho.size):
            yield s.tau, s.sigma_sq, j, s.t_start[j], s.rho[j], s.ige[j], s.ige_n[j]


SUMMARY_HEADER = ["tau", "sigma_sq", "log_rho_over_delta", "log_ige_over_delta"]
WINDOW_HEADER = ["tau", "sigma_sq", "window", "t_start", "rho", "ige", "ige_n_effective"]


def _slopes(series: list[WindowSeries], delta: float) -> dict:
    rows = list(_summary_rows(series, delta))
    taus = [r[0] for r in rows]
    per_sigma = {}
    for s2 in sorted({r[1] for r in rows}):
        sub = [r for r in rows if r[1] == s2]
        per_sigma[repr(s2)] = regression_slope([r[0] for r in sub], [r[2] for r in sub]) if len(sub) > 1 else math.nan
    median_rho = {
        repr(s2): float(np.median(np.concatenate([s.rho for s in series if s.sigma_sq == s2])))
        for s2 in sorted({s.sigma_sq for s in series})
    }
    return {
        "slope_log_rho_over_delta": regression_slope(taus, [r[2] for r in rows]) if len(set(taus)) > 1 else math.nan,
        "slope_log_ige_over_delta": regression_slope(taus, [r[3] for r in rows]) if len(set(taus)) > 1 else math.nan,
        "slope_by_sigma_sq": per_sigma,
        "median_rho_by_sigma_sq": median_rho,
    }


# -- presets ------------------------------------------------------------------


def run_fig1(cfg: ExperimentConfig) -> dict[str, Path]:
    out = Path(cfg.out)
    series = _sweep(cfg)
    files = {
        "fig1.csv": io.write_csv(out / "fig1.csv", SUMMARY_HEADER, _summary_rows(series, cfg.delta)),
        "fig1_windows.csv": io.write_csv(out / "fig1_windows.csv", WINDOW_HEADER, _window_rows(series)),
    }
    files["fig1_summary.json"] = io.write_json(out / "fig1_summary.json", _slopes(series, cfg.delta))
    return files


def _matrix_run(cfg: ExperimentConfig, seed_index: int) -> WindowSeries:
    params = cfg.params(cfg.tau, cfg.sigma_sq, derive_seed(cfg.seed, seed_index, 0))
    start = cfg.warmup(cfg.tau) if cfg.tau > 0 else cfg.delta
    return window_series(params, cfg.sigma_sq, start, cfg.delta, 1, keep_last_pair=True)


def run_fig2(cfg: ExperimentConfig) -> dict[str, Path]:
    out = Path(cfg.out)
    if cfg.tau <= 0:
        raise ValueError("fig2 matrix run needs tau > 0")
    # seed index past the sweep so the matrix run never shares a stream
    n_sweep = len(cfg.tau_grid) * len(cfg.sigma_sq_grid)
    single = _matrix_run(cfg, n_sweep)
    pair = single.last_pair
    rgbm_tm = transition_matrix(pair, cfg.q)
    theta = fit_theta(pair)
    cop_rng = np.random.default_rng(derive_seed(cfg.seed, n_sweep + 1, 0))
    cop_tm = copula_transition_matrix(theta, cfg.q, max(cfg.n_agents, 10 * cfg.q**2), cop_rng)

    series = _sweep(cfg, with_theta=True)
    sweep_rows = [(s.tau, s.sigma_sq, float(np.mean(s.theta)), float(np.mean(s.rho))) for s in series]
    files = {
        "fig2a_rgbm_matrix.csv": io.write_matrix_csv(out / "fig2a_rgbm_matrix.csv", rgbm_tm),
        "fig2a_rgbm_matrix.json": io.write_matrix_json(out / "fig2a_rgbm_matrix.json", rgbm_tm),
        "fig2b_copula_matrix.csv": io.write_matrix_csv(out / "fig2b_copula_matrix.csv", cop_tm),
        "fig2b_copula_matrix.json": io.write_matrix_json(out / "fig2b_copula_matrix.json", cop_tm),
        "fig2_sweep.csv": io.write_csv(out / "fig2_sweep.csv", ["tau", "sigma_sq", "theta", "rho"], sweep_rows),
    }
    files["fig2_summary.json"] = io.write_json(
        out / "fig2_summary.json",
        {
            "matrix_tau": cfg.tau,
            "matrix_sigma_sq": cfg.sigma_sq,
            "fitted_theta": theta.theta,
            "comonotone": theta.comonotone,
            "matrix_rho": float(single.rho[0]),
        },
    )
    return files


def run_fig3(cfg: ExperimentConfig) -> dict[str, Path]:
    out = Path(cfg.out)
    series = _sweep(cfg)
    n_sweep = len(cfg.tau_grid) * len(cfg.sigma_sq_grid)
    single = _matrix_run(cfg, n_sweep)
    tm = transition_matrix(single.last_pair, cfg.q)
    files = {
        "fig3.csv": io.write_csv(out / "fig3.csv", SUMMARY_HEADER, _summary_rows(series, cfg.delta)),
        "fig3_windows.csv": io.write_csv(out / "fig3_windows.csv", WINDOW_HEADER, _window_rows(series)),
        "fig3_matrix.csv": io.write_matrix_csv(out / "fig3_matrix.csv", tm),
        "fig3_matrix.json": io.write_matrix_json(out / "fig3_matrix.json", tm),
    }
    files["fig3_summary.json"] = io.write_json(out / "fig3_summary.json", _slopes(series, cfg.delta))
    return files


# -- relaxation experiments ---------------------------------------------------


@dataclass
class RelaxationRun:
    tau: float
    sigma_sq: float
    k: int
    curve: BetaCurve
    fit: RelaxationFit | None
    beta_star: float


def observation_grid(tau: float, dt: float, horizon_factor: float, obs_per_relaxation: int) -> list[float]:
    """Times spaced 1/(obs_per_relaxation*|tau|) apart, snapped to the dt grid,
    out to horizon_factor/|tau|."""
    rate = abs(tau)
    step = max(1, _on_grid(1.0 / (obs_per_relaxation * rate), dt))
    n_obs = max(1, _on_grid(horizon_factor / rate, dt) // step)
    return [j * step * dt for j in range(n_obs + 1)]


def relaxation_runs(
    params: ModelParams,
    sigma_sq: float,
    subsample_sizes: Sequence[int],
    times: Sequence[float],
    target: StationaryDistribution,
    plateau_window: int = 10,
) -> list[RelaxationRun]:
    """Track typical-individual subsamples from the point-mass start.

    One simulation serves every subsample size. The typical agents are
    picked from the first recorded cross-section.
    """
    panel = simulate(params, times[-1], times, renormalize=params.tau <= 0)
    runs = []
    for k in subsample_sizes:
        sub = select_typical_subsample(panel.records[0], k)
        curve = beta_curve(panel, target, subsample=sub)
        try:
            fit = fit_relaxation(curve, window=plateau_window)
        except FitRefused:
            fit = None
        plateau = detect_plateau(curve, plateau_window)
        runs.append(RelaxationRun(params.tau, sigma_sq, int(k), curve, fit, plateau.level))
    return runs


def reference_target(tau: float, sigma_sq: float) -> StationaryDistribution:
    """Stationary law for tau > 0; for tau < 0 the mirror law at |tau|.

    Negative tau has no stationary law, so the distance is measured against
    the law the economy would settle into with the sign of tau flipped.
    """
    return StationaryDistribution.from_params(abs(tau), sigma_sq)


def _relax_task(cfg_d: dict, tau: float, sigma_sq: float, seed: int):
    cfg = ExperimentConfig(**cfg_d)
    params = cfg.params(tau, sigma_sq, seed)
    times = observation_grid(tau, cfg.dt, cfg.horizon_factor, cfg.obs_per_relaxation)
    return relaxation_runs(
        params, sigma_sq, cfg.subsample_sizes, times, reference_target(tau, sigma_sq), cfg.plateau_window
    )


def run_figA2(cfg: ExperimentConfig) -> dict[str, Path]:
    out = Path(cfg.out)
    tasks, keys = [], []
    idx = 0
    for sigma_sq in cfg.sigma_sq_grid:
        for tau in cfg.tau_grid:
            for rep in range(cfg.repetitions):
                tasks.append((asdict(cfg), tau, sigma_sq, derive_seed(cfg.seed, idx, rep)))
                keys.append((tau, sigma_sq, rep))
            idx += 1
    results = _run_all(_relax_task, tasks, cfg.workers)

    files: dict[str, Path] = {}
    rep_rows, fit_rows = [], []
    for (tau, sigma_sq, rep), runs in zip(keys, results):
        for r in runs:
            rep_rows.append((r.k, sigma_sq, tau, rep, r.beta_star))
            f = r.fit
            fit_rows.append(
                (r.k, sigma_sq, tau, rep)
                + (
                    (f.rate, f.relaxation_time, f.rate_ci[0], f.rate_ci[1], f.plateau_onset, f.plateau_level, f.r_squared, f.mixing)
                    if f is not None
                    else (math.nan,) * 7 + ("refused",)
                )
            )
            if rep == 0:
                name = f"figA2_curve_tau{tau:g}_sigma_sq{sigma_sq:g}_k{r.k}.csv"
                files[name] = io.write_beta_curve(out / name, r.curve)
    med_rows = []
    for k in cfg.subsample_sizes:
        for sigma_sq in cfg.sigma_sq_grid:
            for tau in cfg.tau_grid:
                vals = [row[4] for row in rep_rows if row[0] == k and row[1] == sigma_sq and row[2] == tau]
                med_rows.append((k, sigma_sq, tau, float(np.nanmedian(vals)) if np.isfinite(vals).any() else math.nan))
    files["figA2_beta_star.csv"] = io.write_csv(out / "figA2_beta_star.csv", ["k", "sigma_sq", "tau", "beta_star"], med_rows)
    files["figA2_beta_star_reps.csv"] = io.write_csv(
        out / "figA2_beta_star_reps.csv", ["k", "sigma_sq", "tau", "rep", "beta_star"], rep_rows
    )
    files["figA2_fits.csv"] = io.write_csv(
        out / "figA2_fits.csv",
        ["k", "sigma_sq", "tau", "rep", "rate", "relaxation_time", "rate_ci_lo", "rate_ci_hi",
         "plateau_onset", "plateau_level", "r_squared", "mixing"],
        fit_rows,
    )
    return files


RUNNERS: dict[str, Callable[[ExperimentConfig], dict[str, Path]]] = {
    "fig1": run_fig1,
    "fig2": run_fig2,
    "fig3": run_fig3,
    "figA2": run_figA2,
}


def write_manifest(out: Path | str, config: dict, seed: int, files: dict[str, Path]) -> Path:
    out = Path(out)
    return io.write_json(
        out / "manifest.json",
        {
            "config": config,
            "seed": seed,
            "files": {name: io.sha256(p) for name, p in sorted(files.items())},
        },
    )


def run_preset(cfg: ExperimentConfig) -> dict[str, Path]:
    files = RUNNERS[cfg.preset](cfg)
    files["manifest.json"] = write_manifest(cfg.out, asdict(cfg), cfg.seed, files)
    return files
