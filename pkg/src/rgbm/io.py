"""CSV and JSON readers/writers for panels, parameters, matrices, curves
and fits. Floats are written with ``repr`` so they parse back exactly."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rgbm.core import ModelParams, WealthPanel
from rgbm.mixing import BetaCurve, RelaxationFit, theoretical_relaxation_time
from rgbm.mobility import TransitionMatrix


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: Path | str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(o):
    # JSON has no inf/nan; encode them as strings that float() accepts
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def write_json(path: Path | str, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    obj = json.loads(json.dumps(obj, default=_json_default))
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def sha256(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- model parameters and panels ----------------------------------------------


def write_params(path, params: ModelParams) -> Path:
    return write_json(path, params.to_dict())


def read_params(path) -> ModelParams:
    with open(path) as fh:
        return ModelParams.from_dict(json.load(fh))


def write_panel(path, panel: WealthPanel) -> Path:
    n = panel.params.n_agents
    ids = np.arange(n)

    def rows():
        for t, rec in zip(panel.times, panel.records):
            ts = repr(float(t))
            for i, x in zip(ids, rec):
                yield ts, int(i), float(x)

    return write_csv(path, ["t", "agent_id", "x"], rows())


def read_panel(path, params: ModelParams | None = None) -> WealthPanel:
    """Load a ``t,agent_id,x`` panel; parameters default to a sibling params.json."""
    path = Path(path)
    if params is None:
        params = read_params(path.with_name("params.json"))
    header, rows = read_csv(path)
    if header != ["t", "agent_id", "x"]:
        raise ValueError(f"{path}: expected header t,agent_id,x, got {','.join(header)}")
    times: list[float] = []
    recs: dict[float, np.ndarray] = {}
    for t_s, i_s, x_s in rows:
        t = float(t_s)
        if t not in recs:
            times.append(t)
            recs[t] = np.full(params.n_agents, np.nan)
        recs[t][int(i_s)] = float(x_s)
    records = np.array([recs[t] for t in times])
    if np.isnan(records).any():
        raise ValueError(f"{path}: panel is missing agents at some time")
    return WealthPanel(params=params, times=np.array(times), records=records)


# -- mobility outputs ---------------------------------------------------------


def write_matrix_csv(path, tm: TransitionMatrix) -> Path:
    header = [f"q{j + 1}" for j in range(tm.q)]
    return write_csv(path, header, tm.a.tolist())


def write_matrix_json(path, tm: TransitionMatrix) -> Path:
    return write_json(path, {"q": tm.q, "probabilities": tm.a, "counts": tm.counts})


def read_matrix_json(path) -> TransitionMatrix:
    with open(path) as fh:
        d = json.load(fh)
    return TransitionMatrix(q=d["q"], a=np.array(d["probabilities"]), counts=np.array(d["counts"]))


MEASURE_HEADER = ["measure", "value", "delta", "n_effective"]


# -- mixing outputs -----------------------------------------------------------


def write_beta_curve(path, curve: BetaCurve) -> Path:
    return write_csv(path, ["t", "beta", "k"], ((t, b, curve.k) for t, b in zip(curve.times, curve.beta)))


def read_beta_curve(path) -> BetaCurve:
    header, rows = read_csv(path)
    if header != ["t", "beta", "k"]:
        raise ValueError(f"{path}: expected header t,beta,k")
    t = np.array([float(r[0]) for r in rows])
    b = np.array([float(r[1]) for r in rows])
    k = int(rows[0][2]) if rows else 0
    return BetaCurve(times=t, beta=b, k=k)


def write_fit(path, fit: RelaxationFit, tau: float | None = None) -> Path:
    d = fit.to_dict()
    if tau is not None and tau > 0:
        d["theoretical_relaxation_time"] = theoretical_relaxation_time(tau)
    return write_json(path, d)
