"""Scenario files (TOML).  Unknown sections or keys are errors.

    case = "toy3"               # bundled name or path relative to this file
    controller = "mipc"         # none | vsm | mipc

    [sim]        duration, control_period, substep, seed
    [[disturbance]] machine, start, end, dp
    [limits]     p_min, p_max, energy, rate     (shared by VSM and MIPC)
    [vsm]        k_m, k_d, smoothing, grid_k_m, grid_k_d
    [mipc]       horizon, q1, q2, linearize, model_substeps
    [observer]   enabled, channels, q_state, q_dist, disturbance, feed_prediction
    [noise]      omega, delta
    [comm]       measured                        (machine names)
    [agc]        gain
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    pass
else:
    pass

from ..errors import CaseFormatError
from .case import Case, _parse_toml, bundled_case, load_case

CONTROLLERS = ("none", "vsm", "mipc")

_NUM = (int, float)
_SCHEMA = {
    "sim": {"duration": _NUM, "control_period": _NUM, "substep": _NUM, "seed": int},
    "limits": {"p_min": (int, float, list), "p_max": (int, float, list),
               "energy": (int, float, list), "rate": (int, float, list)},
    "vsm": {"k_m": _NUM, "k_d": _NUM, "smoothing": _NUM, "grid_k_m": list, "grid_k_d": list},
    "mipc": {"horizon": int, "q1": _NUM, "q2": _NUM, "linearize": str, "model_substeps": int},
    "observer": {"enabled": bool, "channels": str, "q_state": _NUM, "q_dist": _NUM,
                 "disturbance": str, "feed_prediction": bool},
    "noise": {"omega": _NUM, "delta": _NUM},
    "comm": {"measured": list},
    "agc": {"gain": _NUM},
}
_DIST_KEYS = {"machine": (int, str), "start": _NUM, "end": _NUM, "dp": _NUM}


@dataclass(frozen=True)
class DisturbanceSpec:
    machine: int | str
    start: float
    dp: float
    end: float = math.inf


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to run one closed-loop simulation."""

    case: str
    controller: str = "none"
    name: str = "scenario"
    duration: float = 10.0
    control_period: float = 0.05
    substep: float | None = None
    seed: int = 0
    disturbances: tuple[DisturbanceSpec, ...] = ()
    limits: dict = field(default_factory=dict)
    vsm: dict = field(default_factory=dict)
    mipc: dict = field(default_factory=dict)
    observer: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    comm: dict = field(default_factory=dict)
    agc: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {', '.join(CONTROLLERS)}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.control_period > 0:
            raise ValueError("control period must be positive")
        sub = self.control_period / 10 if self.substep is None else self.substep
        ratio = self.control_period / sub
        if sub <= 0 or ratio < 1 - 1e-12 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("control period must be a positive multiple of the plant substep")

    def with_controller(self, controller: str, **blocks) -> "ScenarioSpec":
        return replace(self, controller=controller, **blocks)

    def resolve_case_path(self) -> Path:
        p = Path(self.case)
        if not p.is_absolute():
            cand = Path(self.base_dir) / p
            if cand.exists():
                return cand
        if p.exists():
            return p
        return bundled_case(self.case)

    def load_case(self) -> Case:
        try:
            path = self.resolve_case_path()
        except FileNotFoundError:
            raise CaseFormatError(f"case {self.case!r} not found", path=self.case) from None
        return load_case(path)


def _check_table(name, table, schema, path):
    if not isinstance(table, dict):
        raise CaseFormatError(f"[{name}] must be a table", path=path)
    unknown = sorted(set(table) - set(schema))
    if unknown:
        raise CaseFormatError(f"[{name}]: unknown key(s) {', '.join(unknown)}", path=path)
    for key, val in table.items():
        typ = schema[key]
        if isinstance(val, bool) and bool not in (typ if isinstance(typ, tuple) else (typ,)):
            raise CaseFormatError(f"[{name}] {key}: unexpected boolean", path=path)
        if not isinstance(val, typ):
            raise CaseFormatError(f"[{name}] {key}: wrong type {type(val).__name__}", path=path)
    return dict(table)


def parse_scenario(text: str, path=None) -> ScenarioSpec:
    raw = _parse_toml(text, path)
    top = {"case", "controller", "name", "sim", "disturbance"} | set(_SCHEMA)
    unknown = sorted(set(raw) - top)
    if unknown:
        raise CaseFormatError(f"unknown key(s) or section(s): {', '.join(unknown)}", path=path)
    if "case" not in raw or not isinstance(raw["case"], str):
        raise CaseFormatError("scenario must name its case (case = \"...\")", path=path)
    blocks = {name: _check_table(name, raw.get(name, {}), schema, path) for name, schema in _SCHEMA.items()}
    dists = []
    for k, entry in enumerate(raw.get("disturbance", [])):
        entry = _check_table(f"disturbance {k}", entry, _DIST_KEYS, path)
        for key in ("machine", "start", "dp"):
            if key not in entry:
                raise CaseFormatError(f"disturbance {k}: missing {key!r}", path=path)
        dists.append(DisturbanceSpec(entry["machine"], float(entry["start"]), float(entry["dp"]),
                                     float(entry.get("end", math.inf))))
    sim = blocks.pop("sim")
    try:
        return ScenarioSpec(
            case=raw["case"],
            controller=raw.get("controller", "none"),
            name=raw.get("name", Path(path).stem if path else "scenario"),
            duration=float(sim.get("duration", 10.0)),
            control_period=float(sim.get("control_period", 0.05)),
            substep=float(sim["substep"]) if "substep" in sim else None,
            seed=int(sim.get("seed", 0)),
            disturbances=tuple(dists),
            base_dir=str(Path(path).parent) if path else ".",
            **blocks,
        )
    except ValueError as exc:
        raise CaseFormatError(str(exc), path=path) from None


def load_scenario(path) -> ScenarioSpec:
    p = Path(path)
    if not p.exists():
        bundled = Path(str(Path(bundled_case("toy3")).parent.parent / "scenarios" / p.name))
        if bundled.suffix != ".toml":
            bundled = bundled.with_suffix(".toml")
        if p.parent == Path(".") and bundled.exists():
            p = bundled
        else:
            raise CaseFormatError("scenario file not found", path=str(path))
    return parse_scenario(p.read_text(), path=str(p))


def bundled_scenarios() -> list[Path]:
    root = Path(bundled_case("toy3")).parent.parent / "scenarios"
    return sorted(root.glob("*.toml"))
