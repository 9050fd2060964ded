"""Nonlinear multi-machine plant: swing dynamics, governor/AGC and IBR tracking.

The swing equations are discretized with the semi-implicit Euler step

    omega+ = omega + (h/m) (P_m - P_e - d omega - dP)
    delta+ = delta + h omega_b omega+

where ``omega`` is the per-unit speed deviation and ``omega_b`` converts it
to rad/s.  IBRs are ideal power sources: between control instants the
commanded power is held and the IBR angles are re-solved by Newton's method
at every substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .errors import DimensionError, InfeasibleSetpoint, SimulationDiverged
from .netmodel import ReducedNetwork, ac_injections, ac_jacobian, ac_power_ibrs, ac_power_machines

OMEGA_B_60HZ = 2.0 * math.pi * 60.0


@dataclass(frozen=True, eq=False)
class MachineParams:
    """Per-machine dynamic parameters (system per-unit base)."""

    m: np.ndarray
    d: np.ndarray
    droop: np.ndarray
    tau_g: np.ndarray
    omega_b: float = OMEGA_B_60HZ
    agc_gain: float = 0.0

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(-1)
        n = m.size
        arrays = {}
        for name in ("d", "droop", "tau_g"):
            val = np.array(getattr(self, name), dtype=float).reshape(-1)
            if val.size == 1 and n > 1:
                val = np.full(n, val[0])
            if val.shape != (n,):
                raise DimensionError(f"{name} must have {n} entries")
            arrays[name] = val
        if np.any(m <= 0):
            raise ValueError("inertia constants must be positive")
        if np.any(arrays["d"] < 0):
            raise ValueError("damping must be non-negative")
        if np.any(arrays["tau_g"] <= 0):
            raise ValueError("governor time constants must be positive")
        if np.any(arrays["droop"] <= 0):
            raise ValueError("droop constants must be positive")
        if self.omega_b <= 0:
            raise ValueError("base speed must be positive")
        if self.agc_gain < 0:
            raise ValueError("AGC gain must be non-negative")
        object.__setattr__(self, "m", m)
        for name, val in arrays.items():
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.m.size


@dataclass(frozen=True, eq=False)
class PlantState:
    """Plant state at time ``t``.

    ``pm_ref`` is the scheduled mechanical power; the governor adds ``p_gov``.
    """

    t: float
    delta: np.ndarray
    omega: np.ndarray
    p_gov: np.ndarray
    agc: float
    pm_ref: np.ndarray
    u: np.ndarray

    @property
    def pm(self) -> np.ndarray:
        return self.pm_ref + self.p_gov


@dataclass(frozen=True)
class Disturbance:
    start: float
    end: float
    machine: int
    dp: float

    def __post_init__(self):
        if self.start < 0 or self.end < 0:
            raise ValueError("disturbance times must be non-negative")
        if not self.start < self.end:
            raise ValueError("disturbance start must precede its end")


@dataclass(frozen=True)
class DisturbanceSchedule:
    events: tuple[Disturbance, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def at(self, t: float, n: int) -> np.ndarray:
        dp = np.zeros(n)
        for ev in self.events:
            if ev.start <= t < ev.end:
                dp[ev.machine] += ev.dp
        return dp


@dataclass(frozen=True, eq=False)
class Equilibrium:
    delta: np.ndarray
    u: np.ndarray
    pm: np.ndarray
    p_ibr: np.ndarray


def solve_equilibrium(net: ReducedNetwork, p_gen, p_ibr, *, tol=1e-11, max_iter=50) -> Equilibrium:
    """Angles that realize the scheduled injections with the slack angle at zero.

    ``p_gen`` is the machine schedule; the slack entry is ignored and replaced
    by whatever balances the network.
    """
    p_gen = np.asarray(p_gen, dtype=float)
    p_ibr = np.asarray(p_ibr, dtype=float)
    if p_gen.shape != (net.n_gen,) or p_ibr.shape != (net.n_ibr,):
        raise DimensionError("schedule does not match the network")
    target = np.empty(net.bus_sets.n_nodes)
    target[net.gen_idx] = p_gen
    target[net.ibr_idx] = p_ibr
    slack_node = net.bus_sets.generators[net.bus_sets.slack]
    free = np.array([i for i in range(target.size) if i != slack_node], dtype=int)
    theta = np.zeros(target.size)
    for _ in range(max_iter):
        mis = ac_injections(net, theta)[free] - target[free]
        if np.max(np.abs(mis), initial=0.0) < tol:
            break
        J = ac_jacobian(net, theta)[np.ix_(free, free)]
        theta[free] -= np.linalg.solve(J, mis)
    else:
        raise InfeasibleSetpoint("equilibrium power flow did not converge")
    p = ac_injections(net, theta)
    return Equilibrium(
        delta=theta[net.gen_idx].copy(),
        u=theta[net.ibr_idx].copy(),
        pm=p[net.gen_idx].copy(),
        p_ibr=p[net.ibr_idx].copy(),
    )


def initial_state(eq: Equilibrium, t: float = 0.0) -> PlantState:
    n = eq.delta.size
    return PlantState(
        t=t,
        delta=eq.delta.copy(),
        omega=np.zeros(n),
        p_gov=np.zeros(n),
        agc=0.0,
        pm_ref=eq.pm.copy(),
        u=eq.u.copy(),
    )


def step_swing(state: PlantState, net: ReducedNetwork, params: MachineParams, dp, h: float) -> PlantState:
    """One semi-implicit Euler step of the swing equations.

    Mechanical power is taken from ``state`` and IBR angles must already be
    resolved for the commanded powers.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    pe = ac_power_machines(net, state.delta, state.u).total
    omega = state.omega + (h / params.m) * (state.pm - pe - params.d * state.omega - np.asarray(dp))
    delta = state.delta + h * params.omega_b * omega
    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(delta))):
        raise SimulationDiverged(f"non-finite machine state at t={state.t + h:.6g}", t=state.t + h)
    return replace(state, t=state.t + h, omega=omega, delta=delta)


def governor_agc(state: PlantState, params: MachineParams, h: float) -> PlantState:
    """Forward-Euler update of the droop governors and the AGC integrator.

    AGC integrates the inertia-weighted (COI) speed deviation and shares its
    output among machines in proportion to inertia.
    """
    share = params.m / params.m.sum()
    coi = float(share @ state.omega)
    p_gov = state.p_gov + (h / params.tau_g) * (
        -state.omega / params.droop + share * state.agc - state.p_gov
    )
    agc = state.agc - h * params.agc_gain * coi
    return replace(state, p_gov=p_gov, agc=agc)


def track_ibr_setpoints(net: ReducedNetwork, delta, p_cmd, u_init, *, tol=1e-10, max_iter=50) -> np.ndarray:
    """IBR angles at which the AC injections equal ``p_cmd`` (Newton's method)."""
    p_cmd = np.asarray(p_cmd, dtype=float)
    u = np.array(u_init, dtype=float)
    if p_cmd.shape != (net.n_ibr,) or u.shape != (net.n_ibr,):
        raise DimensionError("IBR command/angle dimension mismatch")
    if net.n_ibr == 0:
        return u
    ii = net.ibr_idx
    ee, g, b = net._ee[ii], net.g[ii], net.b[ii]
    own = (np.arange(len(ii)), ii)
    diag = (own[0], own[0])
    theta = net.angles(delta, u)
    for _ in range(max_iter + 1):
        diff = theta[ii, None] - theta[None, :]
        cos, sin = np.cos(diff), np.sin(diff)
        res = (ee * (g * cos + b * sin)).sum(axis=1) - p_cmd
        if np.max(np.abs(res)) < tol:
            return theta[ii].copy()
        rows = ee * (g * sin - b * cos)
        rows[own] = 0.0
        J = rows[:, ii]
        J[diag] = -rows.sum(axis=1)
        try:
            step = np.linalg.solve(J, res)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleSetpoint("singular IBR tracking Jacobian") from exc
        theta[ii] -= step
        if not np.all(np.isfinite(theta)):
            break
    raise InfeasibleSetpoint(f"IBR set-point {p_cmd} not reachable (residual {np.max(np.abs(res)):.3g})")


@dataclass(frozen=True)
class Measurement:
    """What a controller sees at a control instant (possibly noisy)."""

    t: float
    delta: np.ndarray
    omega: np.ndarray
    p_ibr: np.ndarray


class Controller(Protocol):
    def __call__(self, meas: Measurement) -> np.ndarray: ...


class HoldController:
    """Keeps every IBR at a fixed set-point (no frequency support)."""

    def __init__(self, p0):
        self.p0 = np.asarray(p0, dtype=float).copy()

    def __call__(self, meas: Measurement) -> np.ndarray:
        return self.p0.copy()


@dataclass(frozen=True)
class SimConfig:
    duration: float
    control_period: float
    substep: float | None = None
    noise_omega: float = 0.0
    noise_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.control_period <= 0:
            raise ValueError("control period must be positive")
        if self.substep is None:
            object.__setattr__(self, "substep", self.control_period / 10.0)
        if self.substep <= 0 or self.substep > self.control_period * (1 + 1e-12):
            raise ValueError("plant substep must be positive and no longer than the control period")
        ratio = self.control_period / self.substep
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("control period must be a positive multiple of the plant substep")
        if self.noise_omega < 0 or self.noise_delta < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def substeps_per_control(self) -> int:
        return int(round(self.control_period / self.substep))

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.duration / self.substep - 1e-9))


@dataclass(eq=False)
class Trajectory:
    """Samples at every plant substep; ``extra`` holds controller telemetry."""

    t: np.ndarray
    is_control: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    pm: np.ndarray
    pe: np.ndarray
    u: np.ndarray
    p_cmd: np.ndarray
    p_ibr: np.ndarray
    dp: np.ndarray
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size


def _apply_command(net, delta, p_cmd, u_prev, p_now):
    """Track ``p_cmd``; back off toward the present injection if unreachable."""
    target = np.asarray(p_cmd, dtype=float)
    for attempt in range(12):
        try:
            return track_ibr_setpoints(net, delta, target, u_prev), target, attempt
        except InfeasibleSetpoint:
            target = 0.5 * (target + p_now)
    raise InfeasibleSetpoint(f"could not track IBR command {p_cmd}")


def simulate(
    net: ReducedNetwork,
    params: MachineParams,
    schedule: DisturbanceSchedule,
    controller: Controller | Callable[[Measurement], np.ndarray],
    cfg: SimConfig,
    *,
    state: PlantState,
) -> Trajectory:
    """Closed-loop simulation from ``state``.

    The controller is called at every control instant with a measurement
    (additive Gaussian noise on ``delta`` and ``omega`` when configured) and
    its IBR power command is held until the next instant.
    """
    rng = np.random.default_rng(cfg.seed)
    n, m = net.n_gen, net.n_ibr
    K = cfg.n_steps + 1
    h = cfg.substep
    per = cfg.substeps_per_control

    t_arr = np.empty(K)
    is_ctrl = np.zeros(K, dtype=bool)
    out = {k: np.empty((K, n)) for k in ("delta", "omega", "pm", "pe", "dp")}
    out.update({k: np.empty((K, m)) for k in ("u", "p_cmd", "p_ibr")})
    extra: dict[str, np.ndarray] = {}
    telemetry: dict[str, float] = {}
    backoffs = 0

    p_cmd = ac_power_ibrs(net, state.delta, state.u).total
    t0 = state.t
    for k in range(K):
        t = t0 + k * h
        state = replace(state, t=t)
        p_ibr_now = ac_power_ibrs(net, state.delta, state.u).total
        if k % per == 0 and k < K - 1:
            meas = Measurement(
                t=t,
                delta=state.delta + cfg.noise_delta * rng.standard_normal(n) if cfg.noise_delta else state.delta.copy(),
                omega=state.omega + cfg.noise_omega * rng.standard_normal(n) if cfg.noise_omega else state.omega.copy(),
                p_ibr=p_ibr_now,
            )
            p_cmd = np.asarray(controller(meas), dtype=float).reshape(m)
            is_ctrl[k] = True
            telemetry = dict(getattr(controller, "telemetry", {}) or {})
        u, applied, tries = _apply_command(net, state.delta, p_cmd, state.u, p_ibr_now)
        backoffs += tries > 0
        if tries:
            p_cmd = applied
        state = replace(state, u=u)
        pe = ac_power_machines(net, state.delta, state.u).total
        dp = schedule.at(t, n)

        t_arr[k] = t
        out["delta"][k] = state.delta
        out["omega"][k] = state.omega
        out["pm"][k] = state.pm
        out["pe"][k] = pe
        out["dp"][k] = dp
        out["u"][k] = state.u
        out["p_cmd"][k] = p_cmd
        out["p_ibr"][k] = p_ibr_now if m == 0 else ac_power_ibrs(net, state.delta, state.u).total
        for name, val in telemetry.items():
            if name not in extra:
                extra[name] = np.full(K, np.nan)
            extra[name][k] = val
        if k == K - 1:
            break
        gov = governor_agc(state, params, h)
        try:
            state = step_swing(state, net, params, dp, h)
        except SimulationDiverged as exc:
            raise SimulationDiverged(f"{exc} (substep {k})", t=exc.t, step=k) from None
        state = replace(state, p_gov=gov.p_gov, agc=gov.agc)

    return Trajectory(
        t=t_arr,
        is_control=is_ctrl,
        extra=extra,
        meta={"substep": h, "control_period": cfg.control_period, "setpoint_backoffs": backoffs},
        **out,
    )
