"""Scenario orchestration, metrics and output files."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FreqCtlError, InfeasibleSetpoint, SimulationDiverged, TuningError
from ..mipc import MipcConfig, MipcController
from ..observer import CommMask, ObserverConfig
from ..plant import (
    Disturbance,
    DisturbanceSchedule,
    HoldController,
    MachineParams,
    SimConfig,
    Trajectory,
    initial_state,
    simulate,
    solve_equilibrium,
)
from ..vsm import VsmController, VsmGains
from .case import Case
from .scenario import ScenarioSpec

SETTLING_BAND = 5e-4
VIOLATION_TOL = 1e-9
DEFAULT_GRID_K_M = (0.0, 2.0, 8.0, 32.0)
DEFAULT_GRID_K_D = (0.0, 10.0, 40.0, 160.0, 640.0)


@dataclass(frozen=True)
class RunMetrics:
    objective: float
    nadir: float
    max_rocof: float
    settling_time: float
    energy: float
    max_ibr_energy: float
    violations: int

    def as_dict(self) -> dict:
        return asdict(self)


# metric name -> True if larger is better
TIE_TOL = 1e-9  # relative; equal metrics share the win
METRIC_SENSE = {"objective": False, "nadir": True, "max_rocof": False, "settling_time": False, "violations": False}


@dataclass(eq=False)
class RunResult:
    spec: ScenarioSpec
    case: Case
    trajectory: Trajectory
    metrics: RunMetrics
    log: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def objective(omega_ctrl: np.ndarray, h: float) -> float:
    """``sum ||w_k||^2 + (1/h) sum ||w_k - w_{k-1}||^2`` over control-instant samples."""
    w = np.asarray(omega_ctrl, dtype=float)
    if w.shape[0] == 0:
        return 0.0
    return float((w**2).sum() + (np.diff(w, axis=0) ** 2).sum() / h)


def compute_metrics(t, omega, p_ibr, is_control, control_period, *, p_min=-np.inf, p_max=np.inf,
                    band: float = SETTLING_BAND) -> RunMetrics:
    """Metrics from sampled trajectories (rows are plant substeps)."""
    t = np.asarray(t, dtype=float)
    omega = np.asarray(omega, dtype=float).reshape(t.size, -1)
    p_ibr = np.asarray(p_ibr, dtype=float).reshape(t.size, -1)
    is_control = np.asarray(is_control, dtype=bool)
    dt = np.diff(t)
    rocof = np.abs(np.diff(omega, axis=0)) / dt[:, None] if t.size > 1 else np.zeros((0, 1))
    outside = np.flatnonzero(np.abs(omega).max(axis=1) > band)
    settling = float(t[outside[-1]] - t[0]) if outside.size else 0.0
    if p_ibr.shape[1] and t.size > 1:
        per_ibr = (dt[:, None] * (p_ibr[:-1] - p_ibr[0])).sum(axis=0)
    else:
        per_ibr = np.zeros(max(p_ibr.shape[1], 1))
    lo = np.broadcast_to(np.asarray(p_min, dtype=float), (p_ibr.shape[1],))
    hi = np.broadcast_to(np.asarray(p_max, dtype=float), (p_ibr.shape[1],))
    bad = (p_ibr < lo - VIOLATION_TOL) | (p_ibr > hi + VIOLATION_TOL)
    return RunMetrics(
        objective=objective(omega[is_control], control_period),
        nadir=float(omega.min()),
        max_rocof=float(rocof.max(initial=0.0)),
        settling_time=settling,
        energy=float(per_ibr.sum()),
        max_ibr_energy=float(per_ibr.max(initial=0.0)),
        violations=int(bad.any(axis=1).sum()),
    )


def _limits(spec: ScenarioSpec, n_ibr: int):
    lim = spec.limits

    def vec(key, default):
        val = lim.get(key, default)
        arr = np.asarray(val, dtype=float).reshape(-1)
        if arr.size not in (1, n_ibr):
            raise ValueError(f"limits.{key} needs 1 or {n_ibr} values")
        return np.broadcast_to(arr, (n_ibr,)).copy()

    return vec("p_min", -np.inf), vec("p_max", np.inf), vec("energy", np.inf), vec("rate", np.inf)


def _params(spec: ScenarioSpec, case: Case) -> MachineParams:
    p = case.params
    if "gain" in spec.agc:
        p = MachineParams(p.m, p.d, p.droop, p.tau_g, p.omega_b, float(spec.agc["gain"]))
    return p


def _schedule(spec: ScenarioSpec, case: Case) -> DisturbanceSchedule:
    return DisturbanceSchedule(tuple(
        Disturbance(d.start, d.end, case.machine_index(d.machine), d.dp) for d in spec.disturbances
    ))


def _mask(spec: ScenarioSpec, case: Case, channels: str):
    measured = spec.comm.get("measured")
    if measured is None:
        return CommMask.full(case.n_gen, channels)
    idx = {case.machine_index(m) for m in measured}
    return CommMask(tuple(i in idx for i in range(case.n_gen)), channels)


def build_controller(spec: ScenarioSpec, case: Case, eq, params: MachineParams, gains: VsmGains | None = None):
    """Controller object for ``spec.controller``."""
    p_min, p_max, energy, rate = _limits(spec, case.n_ibr)
    h = spec.control_period
    if spec.controller == "none":
        return HoldController(eq.p_ibr)
    if spec.controller == "vsm":
        if gains is None:
            gains = VsmGains(float(spec.vsm.get("k_m", 0.0)), float(spec.vsm.get("k_d", 0.0)))
        return VsmController(gains, params.m, eq.p_ibr, h, p_min=p_min, p_max=p_max, energy=energy,
                             smoothing=float(spec.vsm.get("smoothing", 0.0)))
    mp = spec.mipc
    cfg = MipcConfig(
        horizon=int(mp.get("horizon", 20)),
        control_period=h,
        q1=float(mp.get("q1", 1.0)),
        q2=float(mp["q2"]) if "q2" in mp else None,
        p_min=p_min, p_max=p_max, energy=energy, rate=rate,
    )
    obs = None
    ob = dict(spec.observer)
    if ob.pop("enabled", False):
        obs = ObserverConfig(**ob)
    noise = (float(spec.noise.get("omega", 0.0)), float(spec.noise.get("delta", 0.0)))
    mask = _mask(spec, case, obs.channels if obs else "both") if obs else None
    return MipcController(case.net, params, eq, cfg, observer=obs, mask=mask, noise=noise,
                          linearize=mp.get("linearize", "equilibrium"),
                          model_substeps=int(mp.get("model_substeps", 1)))


def run_scenario(spec: ScenarioSpec, *, case: Case | None = None, gains: VsmGains | None = None,
                 out_dir=None, fmt: str = "csv", plots: bool = False) -> RunResult:
    """Run one closed-loop simulation; writes artifacts when ``out_dir`` is given.

    A ``vsm`` spec without fixed gains (``k_m``/``k_d``) is tuned first.
    """
    case = case or spec.load_case()
    params = _params(spec, case)
    meta: dict = {"scenario": spec.name, "case": case.name, "controller": spec.controller,
                  "seed": spec.seed, "settling_band": SETTLING_BAND}
    if spec.controller == "vsm" and gains is None and not ({"k_m", "k_d"} & set(spec.vsm)):
        tuned = tune_vsm(spec, case=case)
        gains = tuned.best
        meta["vsm_grid"] = [[g.k_m, g.k_d] for g, _ in tuned.table]
    eq = solve_equilibrium(case.net, case.p_gen, case.p_ibr)
    ctrl = build_controller(spec, case, eq, params, gains)
    if isinstance(ctrl, VsmController):
        meta["vsm_gains"] = [ctrl.gains[0].k_m, ctrl.gains[0].k_d]
    sim = SimConfig(
        duration=spec.duration, control_period=spec.control_period, substep=spec.substep,
        noise_omega=float(spec.noise.get("omega", 0.0)), noise_delta=float(spec.noise.get("delta", 0.0)),
        seed=spec.seed,
    )
    try:
        traj = simulate(case.net, params, _schedule(spec, case), ctrl, sim, state=initial_state(eq))
    except FreqCtlError as exc:
        raise type(exc)(f"scenario {spec.name!r} ({spec.controller}): {exc}") from exc
    p_min, p_max, _, _ = _limits(spec, case.n_ibr)
    metrics = compute_metrics(traj.t, traj.omega, traj.p_ibr, traj.is_control, spec.control_period,
                              p_min=p_min, p_max=p_max)
    meta.update(traj.meta)
    log = list(getattr(ctrl, "log", []))
    if log:
        meta["qp_fallbacks"] = int(sum(entry["fallback"] for entry in log))
    result = RunResult(spec, case, traj, metrics, log, meta)
    if out_dir is not None:
        write_outputs(result, out_dir, fmt=fmt, plots=plots)
    return result


# ---------------------------------------------------------------- outputs

def trajectory_columns(case: Case, traj: Trajectory) -> list[tuple[str, np.ndarray]]:
    cols = [("t", traj.t)]
    for qty in ("delta", "omega", "pm", "pe"):
        arr = getattr(traj, qty)
        cols += [(f"{qty}_{name}", arr[:, i]) for i, name in enumerate(case.machine_names)]
    for qty in ("u", "p_cmd", "p_ibr"):
        arr = getattr(traj, qty)
        cols += [(f"{qty}_{name}", arr[:, i]) for i, name in enumerate(case.ibr_names)]
    cols += [(f"dp_{name}", traj.dp[:, i]) for i, name in enumerate(case.machine_names)]
    cols += [(name, val) for name, val in sorted(traj.extra.items())]
    cols.append(("is_control", traj.is_control.astype(int)))
    return cols


def write_trajectory_csv(result: RunResult, path) -> None:
    """CSV with ``# key = value`` metadata lines, a header row and 12-digit values."""
    traj, spec = result.trajectory, result.spec
    p_min, p_max, _, _ = _limits(spec, result.case.n_ibr)
    cols = trajectory_columns(result.case, traj)
    buf = io.StringIO()
    buf.write(f"# control_period = {spec.control_period!r}\n")
    buf.write(f"# settling_band = {SETTLING_BAND!r}\n")
    buf.write(f"# p_min = {json.dumps(p_min.tolist())}\n".replace("-Infinity", "-inf").replace("Infinity", "inf"))
    buf.write(f"# p_max = {json.dumps(p_max.tolist())}\n".replace("-Infinity", "-inf").replace("Infinity", "inf"))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([name for name, _ in cols])
    data = np.column_stack([np.asarray(v, dtype=float) for _, v in cols])
    for row in data:
        writer.writerow([f"{v:.12g}" for v in row])
    Path(path).write_text(buf.getvalue())


def read_trajectory_csv(path):
    """Return ``(meta, columns)`` from a trajectory CSV."""
    meta, lines = {}, Path(path).read_text().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            meta[key.strip()] = val.strip()
        else:
            body.append(line)
    rows = list(csv.reader(body))
    header, values = rows[0], np.array(rows[1:], dtype=float)
    return meta, {name: values[:, i] for i, name in enumerate(header)}


def metrics_from_csv(path) -> RunMetrics:
    """Recompute run metrics from a trajectory CSV alone."""
    meta, cols = read_trajectory_csv(path)

    def parse_list(text):
        return [float(v) for v in text.strip("[]").split(",")] if text.strip("[]") else []

    omega = np.column_stack([v for k, v in cols.items() if k.startswith("omega_")])
    ibr = [v for k, v in cols.items() if k.startswith("p_ibr_")]
    p_ibr = np.column_stack(ibr) if ibr else np.zeros((cols["t"].size, 0))
    return compute_metrics(
        cols["t"], omega, p_ibr, cols["is_control"] > 0.5, float(meta["control_period"]),
        p_min=parse_list(meta["p_min"]) or -np.inf, p_max=parse_list(meta["p_max"]) or np.inf,
        band=float(meta["settling_band"]),
    )


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def metrics_record(result: RunResult) -> dict:
    return _json_safe({"scenario": result.spec.name, "controller": result.spec.controller,
                       **result.metrics.as_dict(), "meta": result.meta})


def write_metrics(records: list[dict], path, fmt: str = "csv") -> None:
    """``csv``: one row per run; ``json-lines``: one JSON object per run."""
    if fmt == "json-lines":
        Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
        return
    if fmt != "csv":
        raise ValueError(f"unknown metrics format {fmt!r}")
    keys = ["scenario", "controller"] + list(RunMetrics.__dataclass_fields__)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(keys)
    for r in records:
        writer.writerow([f"{r[k]:.12g}" if isinstance(r[k], float) else r[k] for k in keys])
    Path(path).write_text(buf.getvalue())


def write_outputs(result: RunResult, out_dir, *, fmt: str = "csv", plots: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(result, out / "trajectory.csv")
    write_metrics([metrics_record(result)], out / ("metrics.csv" if fmt == "csv" else "metrics.jsonl"), fmt)
    if result.log:
        (out / "run_log.jsonl").write_text("".join(json.dumps(_json_safe(e)) + "\n" for e in result.log))
    if plots:
        from .plots import plot_run
        plot_run(result, out)
    return out


# ---------------------------------------------------------------- tuning and comparison

@dataclass
class TuneResult:
    best: VsmGains
    best_metrics: RunMetrics
    table: list  # (VsmGains, RunMetrics | None)


def _grid(spec: ScenarioSpec):
    k_m = spec.vsm.get("grid_k_m", DEFAULT_GRID_K_M)
    k_d = spec.vsm.get("grid_k_d", DEFAULT_GRID_K_D)
    return [VsmGains(float(a), float(b)) for a, b in itertools.product(k_m, k_d)]


def _score(args):
    spec, case, gains = args
    try:
        return run_scenario(spec, case=case, gains=gains).metrics
    except (SimulationDiverged, InfeasibleSetpoint):
        return None


def tune_vsm(spec: ScenarioSpec, grid=None, *, case: Case | None = None, metric: str = "objective",
             workers: int = 1) -> TuneResult:
    """Grid search over VSM gains; ties go to smaller ``k_m`` then smaller ``k_d``."""
    case = case or spec.load_case()
    grid = sorted(grid if grid is not None else _grid(spec), key=lambda g: (g.k_m, g.k_d))
    if not grid:
        raise TuningError("empty VSM gain grid")
    vspec = spec.with_controller("vsm")
    jobs = [(vspec, case, g) for g in grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            scores = list(pool.map(_score, jobs))
    else:
        scores = [_score(j) for j in jobs]
    sense = -1.0 if METRIC_SENSE.get(metric, False) else 1.0
    best = None
    for g, m in zip(grid, scores):
        if m is None or not math.isfinite(getattr(m, metric)):
            continue
        if best is None or sense * getattr(m, metric) < sense * getattr(best[1], metric):
            best = (g, m)
    if best is None:
        raise TuningError(f"all {len(grid)} VSM grid points failed on scenario {spec.name!r}")
    return TuneResult(best[0], best[1], list(zip(grid, scores)))


@dataclass
class Comparison:
    rows: dict  # controller label -> RunMetrics
    winners: dict  # metric -> labels sharing the best value
    results: dict = field(default_factory=dict)
    vsm_gains: VsmGains | None = None

    def render(self) -> str:
        keys = list(RunMetrics.__dataclass_fields__)
        head = ["controller"] + keys
        body = [[label] + [_fmt(getattr(m, k)) + ("*" if label in self.winners.get(k, ()) else "") for k in keys]
                for label, m in self.rows.items()]
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in [head] + body]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append("* best value among the compared controllers (ties share the mark)")
        return "\n".join(lines)

    def records(self) -> list[dict]:
        return [metrics_record(r) for r in self.results.values()]


def _fmt(v):
    return str(v) if isinstance(v, (int, np.integer)) else f"{v:.6g}"


def compare(spec: ScenarioSpec, controllers=("none", "vsm", "mipc"), *, out_dir=None, fmt: str = "csv",
            plots: bool = False, workers: int = 1) -> Comparison:
    """Run the same scenario (same disturbance and seed) under each controller."""
    case = spec.load_case()
    results, gains = {}, None
    for label in controllers:
        s = spec.with_controller(label)
        g = None
        if label == "vsm" and not ({"k_m", "k_d"} & set(spec.vsm)):
            g = tune_vsm(s, case=case, workers=workers).best
            gains = g
        sub = None if out_dir is None else Path(out_dir) / label
        results[label] = run_scenario(s, case=case, gains=g, out_dir=sub, fmt=fmt, plots=plots)
    rows = {k: r.metrics for k, r in results.items()}
    winners = {}
    for metric, larger in METRIC_SENSE.items():
        vals = {k: getattr(m, metric) for k, m in rows.items()}
        best = max(vals.values()) if larger else min(vals.values())
        winners[metric] = tuple(k for k, v in vals.items() if abs(v - best) <= TIE_TOL * max(1.0, abs(best)))
    comp = Comparison(rows, winners, results, gains)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(comp.records(), out / ("comparison.csv" if fmt == "csv" else "comparison.jsonl"), fmt)
        (out / "comparison.txt").write_text(comp.render() + "\n")
    return comp
