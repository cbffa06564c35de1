"""Command-line entry point: ``rgbm <subcommand> [flags]``.

Subcommands ``simulate``, ``measure`` and ``mix`` work on single runs;
``fig1``, ``fig2``, ``fig3`` and ``figA2`` regenerate figure data. Flags
override values from ``--config``; every run writes ``manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from rgbm import io
from rgbm.copula import fit_theta
from rgbm.core import ModelParams, NoStationaryDistributionError, SimulationDiverged, StationaryDistribution, simulate
from rgbm.experiments import (
    PRESETS,
    ExperimentConfig,
    observation_grid,
    reference_target,
    run_preset,
    write_manifest,
)
from rgbm.mixing import FitRefused, beta_curve, fit_relaxation, select_typical_subsample, significance_onset
from rgbm.mobility import CrossSectionPair, ige, spearman, transition_matrix


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config; flags override its values")
    p.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--paper-scale", dest="paper_scale", action="store_true", default=None,
                   help="full-scale population sizes and 1000 repetitions")
    p.add_argument("--workers", type=int, help="parallel workers (results do not depend on it)")


def _model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, help="reallocation rate per year")
    p.add_argument("--sigma-sq", dest="sigma_sq", type=float, help="noise variance per year")
    p.add_argument("--mu", type=float, help="drift per year")
    p.add_argument("--n", dest="n_agents", type=int, help="population size")
    p.add_argument("--dt", type=float, help="integration step in years")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one ensemble and write its panel")
    _common(p)
    _model(p)
    p.add_argument("--horizon", type=float, help="simulated years")
    p.add_argument("--record-every", dest="record_every", type=float,
                   help="years between recorded snapshots (default: only t=0 and the horizon)")

    p = sub.add_parser("measure", help="mobility measures between two panel times")
    _common(p)
    p.add_argument("--panel", type=Path, required=True, help="panel CSV written by simulate")
    p.add_argument("--params", type=Path, help="params JSON (default: next to the panel)")
    p.add_argument("--t0", type=float, help="early time (default: first recorded)")
    p.add_argument("--t1", type=float, help="late time (default: last recorded)")
    p.add_argument("--q", type=int, help="quantiles for the transition matrix (default 10)")

    p = sub.add_parser("mix", help="beta-mixing curve and relaxation fit")
    _common(p)
    _model(p)
    p.add_argument("--panel", type=Path, help="panel CSV; simulated from the model flags if absent")
    p.add_argument("--params", type=Path, help="params JSON (default: next to the panel)")
    p.add_argument("--k", type=int, help="typical-subsample size (default: whole population)")
    p.add_argument("--zeta", type=float, help="tail exponent of the target law")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument("--plateau-window", dest="plateau_window", type=int, help="observations per plateau window")

    for name in PRESETS:
        p = sub.add_parser(name, help=f"regenerate {name} data")
        _common(p)
        _model(p)
        p.add_argument("--tau-grid", dest="tau_grid", type=_floats, help="comma-separated tau values")
        p.add_argument("--sigma-sq-grid", dest="sigma_sq_grid", type=_floats, help="comma-separated sigma^2 values")
        p.add_argument("--subsample-sizes", dest="subsample_sizes", type=_ints, help="comma-separated K values")
        p.add_argument("--delta", type=float, help="window length in years")
        p.add_argument("--q", type=int, help="quantile count")
        p.add_argument("--repetitions", type=int, help="windows (fig1/2/3) or independent runs (figA2)")
    return parser


_CONFIG_KEYS = {
    "seed", "out", "paper_scale", "workers", "tau", "sigma_sq", "mu", "n_agents", "dt",
    "tau_grid", "sigma_sq_grid", "subsample_sizes", "delta", "q", "repetitions", "plateau_window",
    "horizon", "record_every",
}


def _settings(args: argparse.Namespace) -> dict:
    """Config-file values overlaid with explicitly passed flags."""
    base: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.load(fh)
    flags = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS and v is not None}
    return {**base, **flags}


def _require(parser: argparse.ArgumentParser, s: dict, *names: str) -> None:
    missing = [n for n in names if s.get(n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-").replace("n-agents", "n") for n in missing)
        parser.error(f"missing required setting(s): {flags}")


def _params(s: dict) -> ModelParams:
    return ModelParams.from_sigma_sq(
        s["sigma_sq"],
        mu=s.get("mu", 0.0),
        tau=s["tau"],
        n_agents=s.get("n_agents", 10_000),
        dt=s.get("dt", 0.1),
        seed=s.get("seed", 0),
    )


def cmd_simulate(args, parser) -> int:
    s = _settings(args)
    _require(parser, s, "tau", "sigma_sq", "horizon")
    horizon = s["horizon"]
    params = _params(s)
    every = s.get("record_every")
    if every:
        step = int(round(every / params.dt))
        n = int(round(horizon / params.dt))
        times = [k * params.dt for k in range(0, n + 1, step)]
    else:
        times = None
    panel = simulate(params, horizon, times, workers=s.get("workers", 1))
    out = Path(s.get("out", "out"))
    files = {
        "panel.csv": io.write_panel(out / "panel.csv", panel),
        "params.json": io.write_params(out / "params.json", params),
    }
    write_manifest(out, {**s, "command": "simulate"}, params.seed, files)
    return 0


def cmd_measure(args, parser) -> int:
    s = _settings(args)
    params = io.read_params(args.params) if args.params else None
    panel = io.read_panel(args.panel, params)
    if args.t0 is not None:
        t0 = args.t0
    else:
        # earliest snapshot with a non-degenerate cross-section (t=0 is usually a Dirac)
        spread = [i for i, rec in enumerate(panel.records) if rec.min() < rec.max()]
        t0 = float(panel.times[spread[0]]) if spread else float(panel.times[0])
    t1 = args.t1 if args.t1 is not None else float(panel.times[-1])
    if not t1 > t0:
        parser.error("--t1 must be later than --t0")
    q = s.get("q", 10)
    pair = CrossSectionPair(panel.at(t0), panel.at(t1), t1 - t0)
    delta = t1 - t0
    rows = [("spearman", spearman(pair), delta, pair.n)]
    try:
        est = ige(pair)
        rows.append(("ige", est.value, delta, est.n_effective))
    except ValueError:
        rows.append(("ige", math.nan, delta, 0))
    rows.append(("gumbel_theta", fit_theta(pair).theta, delta, pair.n))
    tm = transition_matrix(pair, q)
    out = Path(s.get("out", "out"))
    files = {
        "measures.csv": io.write_csv(out / "measures.csv", io.MEASURE_HEADER, rows),
        "transition_matrix.csv": io.write_matrix_csv(out / "transition_matrix.csv", tm),
        "transition_matrix.json": io.write_matrix_json(out / "transition_matrix.json", tm),
    }
    write_manifest(out, {**s, "panel": str(args.panel), "t0": t0, "t1": t1, "command": "measure"},
                   panel.params.seed, files)
    return 0


def cmd_mix(args, parser) -> int:
    s = _settings(args)
    if args.panel:
        params = io.read_params(args.params) if args.params else None
        panel = io.read_panel(args.panel, params)
        tau, sigma_sq = panel.params.tau, panel.params.sigma_sq
    else:
        _require(parser, s, "tau", "sigma_sq")
        tau, sigma_sq = s["tau"], s["sigma_sq"]
        params = _params(s)
        times = observation_grid(tau, params.dt, 6.0, 50)
        panel = simulate(params, times[-1], times, workers=s.get("workers", 1), renormalize=tau <= 0)
    if args.zeta is not None:
        target = StationaryDistribution(args.zeta)
    else:
        target = reference_target(tau, sigma_sq)
    k = args.k or panel.params.n_agents
    sub = select_typical_subsample(panel.records[0], k)
    curve = beta_curve(panel, target, subsample=sub)
    window = s.get("plateau_window", 10)
    out = Path(s.get("out", "out"))
    files = {"beta_curve.csv": io.write_beta_curve(out / "beta_curve.csv", curve)}
    try:
        fit = fit_relaxation(curve, window=window)
    except FitRefused as e:
        print(f"rgbm mix: relaxation fit refused: {e}", file=sys.stderr)
        fit = None
    if fit is not None:
        files["relaxation_fit.json"] = io.write_fit(out / "relaxation_fit.json", fit, tau)
        onset = significance_onset(curve, target, alpha=args.alpha)
        d = json.loads(Path(files["relaxation_fit.json"]).read_text())
        d["significance_onset"] = onset
        d["target_zeta"] = target.zeta
        files["relaxation_fit.json"] = io.write_json(out / "relaxation_fit.json", d)
    write_manifest(out, {**s, "k": k, "zeta": target.zeta, "command": "mix"}, panel.params.seed, files)
    return 0 if fit is not None else 1


def cmd_preset(args, parser) -> int:
    s = _settings(args)
    try:
        cfg = ExperimentConfig.for_preset(args.command, {k: v for k, v in s.items() if k != "preset"})
    except (TypeError, ValueError) as e:
        parser.error(str(e))
    run_preset(cfg)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"simulate": cmd_simulate, "measure": cmd_measure, "mix": cmd_mix}.get(args.command, cmd_preset)
    try:
        return handler(args, parser)
    except (ValueError, KeyError, OSError, NoStationaryDistributionError, SimulationDiverged) as e:
        print(f"rgbm {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
