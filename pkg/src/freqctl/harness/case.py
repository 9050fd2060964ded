"""Case files: network, machine and IBR data in TOML.

A case lists buses (with constant-impedance loads), branches, synchronous
machines and IBRs.  Each machine and IBR gets an internal node behind its
reactance; all network buses are then eliminated by Kron reduction, leaving
machines first and IBRs after them.

    [case]      name, base_mva, frequency
    [agc]       gain
    [[bus]]     id, vm, pd, qd, gs, bs
    [[branch]]  from, to, r, x, b, tap
    [[machine]] name, bus, xd, emf, p, m, d, droop, tau_g, slack
    [[ibr]]     name, bus, x, emf, p

Powers are per unit on ``base_mva``; ``m`` is the inertia constant in s,
``d`` the damping in p.u. power per p.u. speed.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from ..errors import CaseFormatError, KronReductionError
from ..netmodel import BusSets, ReducedNetwork, kron_reduce
from ..plant import OMEGA_B_60HZ, MachineParams

_FIELDS = {
    "case": {"name": str, "base_mva": float, "frequency": float, "description": str},
    "agc": {"gain": float},
    "bus": {"id": int, "vm": float, "pd": float, "qd": float, "gs": float, "bs": float, "name": str},
    "branch": {"from": int, "to": int, "r": float, "x": float, "b": float, "tap": float},
    "machine": {"name": str, "bus": int, "xd": float, "emf": float, "p": float, "m": float,
                "d": float, "droop": float, "tau_g": float, "slack": bool},
    "ibr": {"name": str, "bus": int, "x": float, "emf": float, "p": float},
}
_REQUIRED = {
    "bus": ("id",),
    "branch": ("from", "to", "x"),
    "machine": ("bus", "xd", "emf", "p", "m"),
    "ibr": ("bus", "x", "emf"),
}
_DEFAULTS = {
    "bus": {"vm": 1.0, "pd": 0.0, "qd": 0.0, "gs": 0.0, "bs": 0.0},
    "branch": {"r": 0.0, "b": 0.0, "tap": 1.0},
    "machine": {"d": 1.0, "droop": 0.05, "tau_g": 2.0, "slack": False},
    "ibr": {"p": 0.0},
}


@dataclass(eq=False)
class Case:
    """A loaded case: raw tables plus the reduced network and machine parameters."""

    name: str
    net: ReducedNetwork
    params: MachineParams
    p_gen: np.ndarray
    p_ibr: np.ndarray
    machine_names: tuple[str, ...]
    ibr_names: tuple[str, ...]
    ybus: np.ndarray
    data: dict = field(repr=False)
    path: Path | None = None

    @property
    def n_gen(self) -> int:
        return self.net.n_gen

    @property
    def n_ibr(self) -> int:
        return self.net.n_ibr

    def machine_index(self, key) -> int:
        if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
            if not 0 <= key < self.n_gen:
                raise ValueError(f"machine index {key} out of range")
            return int(key)
        try:
            return self.machine_names.index(str(key))
        except ValueError:
            raise ValueError(f"unknown machine {key!r}; known: {', '.join(self.machine_names)}") from None


def bundled_case(name: str) -> Path:
    """Path of a case shipped with the package (``toy3`` or ``ne39``)."""
    fname = name if name.endswith(".toml") else f"{name}.toml"
    path = Path(str(resources.files("freqctl") / "data" / "cases" / fname))
    if not path.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return path


def _header_lines(text: str, table: str) -> list[int]:
    """Line numbers of every ``[[table]]`` (or ``[table]``) header."""
    pat = re.compile(rf"^\s*\[\[?\s*{re.escape(table)}\s*\]\]?\s*(#.*)?$")
    return [i + 1 for i, line in enumerate(text.splitlines()) if pat.match(line)]


def _parse_toml(text: str, path):
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        match = re.search(r"line (\d+)", msg)
        raise CaseFormatError(msg, line=int(match.group(1)) if match else None, path=path) from None


def _check_entry(kind, entry, idx, lines, path):
    line = lines[idx] if idx < len(lines) else None
    label = f"{kind}[{idx}]"
    if not isinstance(entry, dict):
        raise CaseFormatError(f"{label} must be a table", line=line, path=path)
    allowed = _FIELDS[kind]
    unknown = sorted(set(entry) - set(allowed))
    if unknown:
        raise CaseFormatError(f"{label}: unknown key(s) {', '.join(unknown)}", line=line, path=path)
    for key in _REQUIRED.get(kind, ()):
        if key not in entry:
            raise CaseFormatError(f"{label}: missing required key {key!r}", line=line, path=path)
    out = dict(_DEFAULTS.get(kind, {}))
    for key, val in entry.items():
        typ = allowed[key]
        if typ is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if typ is int and isinstance(val, bool) or not isinstance(val, typ):
            raise CaseFormatError(f"{label}: {key!r} must be {typ.__name__}", line=line, path=path)
        if typ is float and not math.isfinite(val):
            raise CaseFormatError(f"{label}: {key!r} must be finite", line=line, path=path)
        out[key] = val
    return out, line


def parse_case(text: str, path=None) -> Case:
    raw = _parse_toml(text, path)
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise CaseFormatError(f"unknown section(s) {', '.join(unknown)}", path=path)
    meta, _ = _check_entry("case", raw.get("case", {}), 0, _header_lines(text, "case"), path)
    agc, _ = _check_entry("agc", raw.get("agc", {}), 0, _header_lines(text, "agc"), path)
    tables = {}
    for kind in ("bus", "branch", "machine", "ibr"):
        entries = raw.get(kind, [])
        if not isinstance(entries, list):
            raise CaseFormatError(f"{kind} must be an array of tables ([[{kind}]])", path=path)
        lines = _header_lines(text, kind)
        tables[kind] = [_check_entry(kind, e, i, lines, path) for i, e in enumerate(entries)]
    if not tables["bus"]:
        raise CaseFormatError("case has no buses", path=path)
    if not tables["machine"]:
        raise CaseFormatError("case has no synchronous machines", path=path)

    bus_ids = {}
    for pos, (bus, line) in enumerate(tables["bus"]):
        if bus["id"] in bus_ids:
            raise CaseFormatError(f"duplicate bus id {bus['id']}", line=line, path=path)
        if bus["vm"] <= 0:
            raise CaseFormatError(f"bus {bus['id']}: vm must be positive", line=line, path=path)
        bus_ids[bus["id"]] = pos

    def bus_pos(entry, key, kind, line):
        if entry[key] not in bus_ids:
            raise CaseFormatError(f"{kind}: unknown bus {entry[key]}", line=line, path=path)
        return bus_ids[entry[key]]

    nb = len(tables["bus"])
    machines = [e for e, _ in tables["machine"]]
    ibrs = [e for e, _ in tables["ibr"]]
    n, m = len(machines), len(ibrs)
    Y = np.zeros((nb + n + m, nb + n + m), dtype=complex)

    for bus, _ in tables["bus"]:
        i = bus_ids[bus["id"]]
        Y[i, i] += complex(bus["gs"], bus["bs"]) + complex(bus["pd"], -bus["qd"]) / bus["vm"] ** 2

    for br, line in tables["branch"]:
        f, t = bus_pos(br, "from", "branch", line), bus_pos(br, "to", "branch", line)
        if f == t:
            raise CaseFormatError(f"branch {br['from']}-{br['to']} connects a bus to itself", line=line, path=path)
        if br["tap"] <= 0:
            raise CaseFormatError("branch tap must be positive", line=line, path=path)
        z = complex(br["r"], br["x"])
        if abs(z) == 0:
            raise CaseFormatError("branch impedance must be non-zero", line=line, path=path)
        y, sh, a = 1.0 / z, 0.5j * br["b"], br["tap"]
        Y[f, f] += (y + sh) / a**2
        Y[t, t] += y + sh
        Y[f, t] -= y / a
        Y[t, f] -= y / a

    names = []
    for k, (mach, line) in enumerate(tables["machine"]):
        name = mach.get("name", f"G{k + 1}")
        for key in ("m", "xd", "emf", "tau_g", "droop"):
            if mach[key] <= 0:
                raise CaseFormatError(f"machine {name}: {key} must be positive", line=line, path=path)
        if mach["d"] < 0:
            raise CaseFormatError(f"machine {name}: d must be non-negative", line=line, path=path)
        _stamp(Y, bus_pos(mach, "bus", f"machine {name}", line), nb + k, 1.0 / complex(0.0, mach["xd"]))
        names.append(name)
    ibr_names = []
    for k, (ibr, line) in enumerate(tables["ibr"]):
        name = ibr.get("name", f"I{k + 1}")
        for key in ("x", "emf"):
            if ibr[key] <= 0:
                raise CaseFormatError(f"IBR {name}: {key} must be positive", line=line, path=path)
        _stamp(Y, bus_pos(ibr, "bus", f"IBR {name}", line), nb + n + k, 1.0 / complex(0.0, ibr["x"]))
        ibr_names.append(name)
    if len(set(names + ibr_names)) != n + m:
        raise CaseFormatError("machine and IBR names must be unique", path=path)

    slack = [k for k, mach in enumerate(machines) if mach["slack"]]
    if len(slack) > 1:
        raise CaseFormatError("more than one slack machine", path=path)
    bus_sets = BusSets(tuple(range(n)), tuple(range(n, n + m)), slack[0] if slack else 0)
    emf = np.array([e["emf"] for e in machines] + [e["emf"] for e in ibrs])
    try:
        net = kron_reduce(Y, list(range(nb, nb + n + m)), emf=emf, bus_sets=bus_sets)
    except KronReductionError as exc:
        ids = [tables["bus"][i][0]["id"] for i in exc.buses if i < nb]
        raise CaseFormatError(f"network has an isolated bus group {ids}", path=path) from None

    freq = meta.get("frequency", 60.0)
    params = MachineParams(
        m=[e["m"] for e in machines],
        d=[e["d"] for e in machines],
        droop=[e["droop"] for e in machines],
        tau_g=[e["tau_g"] for e in machines],
        omega_b=OMEGA_B_60HZ * freq / 60.0,
        agc_gain=agc.get("gain", 0.0),
    )
    data = {"case": meta, "agc": agc}
    data.update({kind: [e for e, _ in entries] for kind, entries in tables.items()})
    return Case(
        name=meta.get("name", Path(path).stem if path else "case"),
        net=net,
        params=params,
        p_gen=np.array([e["p"] for e in machines]),
        p_ibr=np.array([e["p"] for e in ibrs]),
        machine_names=tuple(names),
        ibr_names=tuple(ibr_names),
        ybus=Y,
        data=data,
        path=Path(path) if path else None,
    )


def _stamp(Y, i, j, y):
    Y[i, i] += y
    Y[j, j] += y
    Y[i, j] -= y
    Y[j, i] -= y


def load_case(path) -> Case:
    """Load and validate a case; ``path`` may also name a bundled case."""
    p = Path(path)
    if not p.exists() and p.suffix in ("", ".toml") and p.parent == Path("."):
        try:
            p = bundled_case(str(path))
        except FileNotFoundError:
            pass
    if not p.exists():
        raise CaseFormatError("case file not found", path=str(path))
    return parse_case(p.read_text(), path=str(p))


def write_case(case: Case, path) -> None:
    """Write the raw tables back as TOML; reloading gives identical matrices."""
    doc = {k: v for k, v in case.data.items() if v}
    Path(path).write_text(tomli_w.dumps(doc))
