"""MPC-based inverter power control.

The controller predicts the linearized swing dynamics ``N`` control periods
ahead, with the IBR angles as decision variables, and minimizes

    1/2 sum_{t=1..N} [ y_t' Q1 y_t + dy_t' Q2 dy_t ],   dy_t = (y_t - y_{t-1}) / h

over the stacked input ``u = (u^0, ..., u^{N-1})``.  Condensing the dynamics
``x = S u + M x0`` gives ``1/2 x0'Gx0 + x0'Fu + 1/2 u'Hu``; IBR power, energy
and rate limits become linear rows ``L u <= W + V x0``.  Only the first input
is applied, converted to an IBR power set-point through the AC flow.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve

from . import qp
from .errors import DimensionError, ModelDegeneracyError
from .netmodel import ReducedNetwork, SusceptancePartition, ac_power_ibrs, dc_partition
from .plant import Equilibrium, MachineParams, Measurement


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Discrete linearized swing model with state ``x = [d_omega; d_delta]``."""

    A: np.ndarray
    Bu: np.ndarray
    Bd: np.ndarray
    C: np.ndarray
    h: float
    m: np.ndarray
    d: np.ndarray
    omega_b: float
    scheme: str = "symplectic"

    @property
    def n(self) -> int:
        return self.m.size

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.Bu.shape[1]

    def step(self, x, u, d=None):
        x_next = self.A @ x + self.Bu @ u
        if d is not None:
            x_next = x_next + self.Bd @ d
        return x_next


def build_linear_model(
    part: SusceptancePartition, params: MachineParams, h: float, scheme: str = "symplectic",
    substeps: int = 1,
) -> LinearModel:
    """Discretize the DC swing dynamics with step ``h``.

    ``scheme="symplectic"`` reproduces one plant step exactly (the angle row
    uses the updated speed); ``scheme="explicit"`` uses the previous speed,
    which gives the sparse ``[.. ; h*omega_b*I  I]`` angle row.  With
    ``substeps=k`` the model is ``k`` steps of length ``h/k`` with the inputs
    held, matching a plant integrated at the finer step.
    """
    if substeps < 1:
        raise ValueError("substeps must be a positive integer")
    if params.n != part.n_gen:
        raise DimensionError("machine parameters do not match the partition")
    if h <= 0:
        raise ValueError("control period must be positive")
    if np.any(params.m <= 0):
        raise ValueError("zero inertia")
    n, nu = part.n_gen, part.n_ibr
    hs = h / substeps
    hm = hs / params.m
    I = np.eye(n)
    A_ww = I - np.diag(hm * params.d)
    A_wd = -hm[:, None] * part.B_GG
    B_wu = -hm[:, None] * part.B_GI
    B_wd = -np.diag(hm)
    k = hs * params.omega_b
    if scheme == "symplectic":
        A_dw, A_dd = k * A_ww, I + k * A_wd
        B_du, B_dd = k * B_wu, k * B_wd
    elif scheme == "explicit":
        A_dw, A_dd = k * I, I
        B_du, B_dd = np.zeros((n, nu)), np.zeros((n, n))
    else:
        raise ValueError(f"unknown discretization scheme {scheme!r}")
    A = np.block([[A_ww, A_wd], [A_dw, A_dd]])
    Bu = np.vstack([B_wu, B_du])
    Bd = np.vstack([B_wd, B_dd])
    if substeps > 1:
        A1, Bu1, Bd1 = A, Bu, Bd
        for _ in range(substeps - 1):
            A, Bu, Bd = A1 @ A, A1 @ Bu + Bu1, A1 @ Bd + Bd1
    C = np.hstack([I, np.zeros((n, n))])
    return LinearModel(A, Bu, Bd, C, float(h), params.m.copy(), params.d.copy(), params.omega_b, scheme)


class Prediction(NamedTuple):
    S: np.ndarray
    M: np.ndarray
    Theta: np.ndarray
    Gamma: np.ndarray


def build_prediction(A, B, N: int) -> Prediction:
    """Stacked prediction ``[x0; ...; xN] = S u + M x0`` and its row differences.

    ``Theta`` and ``Gamma`` hold ``x_{t-1} - x_t`` for ``t = 1..N``.
    """
    if N < 1:
        raise ValueError("horizon must be at least one step")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    nx, nu = B.shape
    M = np.empty(((N + 1) * nx, nx))
    M[:nx] = np.eye(nx)
    for t in range(1, N + 1):
        M[t * nx:(t + 1) * nx] = A @ M[(t - 1) * nx:t * nx]
    AkB = [B]
    for _ in range(N - 1):
        AkB.append(A @ AkB[-1])
    S = np.zeros(((N + 1) * nx, N * nu))
    for t in range(1, N + 1):
        for k in range(t):
            S[t * nx:(t + 1) * nx, k * nu:(k + 1) * nu] = AkB[t - 1 - k]
    Theta = S[:N * nx] - S[nx:]
    Gamma = M[:N * nx] - M[nx:]
    return Prediction(S, M, Theta, Gamma)


class Cost(NamedTuple):
    G: np.ndarray
    F: np.ndarray
    H: np.ndarray


def build_cost(S, M, Theta, Gamma, Q1, Q2, C, h: float, ridge: float = 0.0) -> Cost:
    """Condensed cost matrices; the initial-state row carries no weight.

    ``Q2`` weighs the scaled difference ``(y_t - y_{t-1})/h``, so ``Q2 = h*I``
    gives the ``(1/h)||d omega||^2`` rate penalty.  ``ridge`` is added to the
    diagonal of ``H`` (needed only when ``H`` is singular).
    """
    C = np.asarray(C, dtype=float)
    ny, nx = C.shape
    Q1 = np.asarray(Q1, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    if Q1.shape != (ny, ny) or Q2.shape != (ny, ny):
        raise DimensionError(f"weights must be {ny}x{ny}")
    N = Theta.shape[0] // nx
    Qh1 = C.T @ Q1 @ C
    Qh2 = C.T @ Q2 @ C / h**2
    Qt1 = block_diag(np.zeros((nx, nx)), *([Qh1] * N))
    Qt2 = block_diag(*([Qh2] * N))
    G = M.T @ Qt1 @ M + Gamma.T @ Qt2 @ Gamma
    F = M.T @ Qt1 @ S + Gamma.T @ Qt2 @ Theta
    H = S.T @ Qt1 @ S + Theta.T @ Qt2 @ Theta
    H = 0.5 * (H + H.T)
    G = 0.5 * (G + G.T)
    if ridge:
        H = H + ridge * np.eye(H.shape[0])
    return Cost(G, F, H)


@dataclass(frozen=True, eq=False)
class PredictionBundle:
    S: np.ndarray
    M: np.ndarray
    Theta: np.ndarray
    Gamma: np.ndarray
    G: np.ndarray
    F: np.ndarray
    H: np.ndarray
    N: int
    nu: int
    factor: tuple = field(repr=False, default=None)

    def objective(self, z0, u) -> float:
        return float(0.5 * z0 @ self.G @ z0 + z0 @ self.F @ u + 0.5 * u @ self.H @ u)


def build_bundle(A, B, C, N: int, Q1, Q2, h: float) -> PredictionBundle:
    """Prediction and cost for ``(A, B)``; checks that ``H`` is positive definite.

    A ridge of 1e-9 is added only if ``H`` fails to factor (e.g. an IBR with
    no path to any machine).
    """
    pred = build_prediction(A, B, N)
    cost = build_cost(*pred, Q1, Q2, C, h)
    H = cost.H
    try:
        factor = cho_factor(H)
    except np.linalg.LinAlgError:
        H = H + 1e-9 * np.eye(H.shape[0])
        try:
            factor = cho_factor(H)
        except np.linalg.LinAlgError as exc:
            raise ModelDegeneracyError("condensed Hessian is not positive definite") from exc
    return PredictionBundle(*pred, cost.G, cost.F, H, N, B.shape[1], factor)


def solve_unconstrained(H, F, x0, factor=None) -> np.ndarray:
    """``u* = -H^-1 F' x0`` via Cholesky."""
    rhs = np.asarray(F).T @ np.asarray(x0, dtype=float)
    try:
        cf = factor if factor is not None else cho_factor(H)
    except np.linalg.LinAlgError as exc:
        raise ModelDegeneracyError("H is not positive definite") from exc
    return -cho_solve(cf, rhs)


@dataclass(frozen=True)
class MipcConfig:
    """Horizon, weights and IBR resource limits.

    ``p_min``/``p_max`` are absolute IBR powers (p.u.), either per IBR or per
    step and IBR with shape ``(N, n_ibr)``.  ``energy`` is the budget of
    extra energy above the nominal set-point in p.u.*s; ``rate`` bounds the
    change of IBR power between consecutive predicted steps.
    """

    horizon: int
    control_period: float
    q1: float | np.ndarray = 1.0
    q2: float | np.ndarray | None = None
    p_min: tuple | np.ndarray = (-np.inf,)
    p_max: tuple | np.ndarray = (np.inf,)
    energy: tuple | np.ndarray = (np.inf,)
    rate: tuple | np.ndarray = (np.inf,)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.control_period <= 0:
            raise ValueError("control period must be positive")
        lo, hi = np.asarray(self.p_min, float), np.asarray(self.p_max, float)
        if np.any(np.broadcast_to(lo, np.broadcast_shapes(lo.shape, hi.shape)) > hi):
            raise ValueError("p_min must not exceed p_max")

    def weights(self, n: int):
        def as_matrix(q):
            q = np.asarray(q, dtype=float)
            mat = q * np.eye(n) if q.ndim == 0 else (np.diag(q) if q.ndim == 1 else q)
            if np.min(np.linalg.eigvalsh(0.5 * (mat + mat.T))) < -1e-12:
                raise ValueError("weights must be positive semidefinite")
            return mat
        q2 = self.control_period if self.q2 is None else self.q2
        return as_matrix(self.q1), as_matrix(q2)

    def per_step(self, values, n_ibr: int) -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 2:
            if arr.shape != (self.horizon, n_ibr):
                raise DimensionError(f"per-step limits must have shape ({self.horizon}, {n_ibr})")
            return arr
        return np.broadcast_to(arr.reshape(-1) if arr.ndim else arr, (self.horizon, n_ibr)).copy()

    def per_ibr(self, values, n_ibr: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(values, dtype=float).reshape(-1), (n_ibr,)).copy()


@dataclass(frozen=True, eq=False)
class ConstraintStack:
    """Rows ``L u <= W + V z0``; ``ibr`` and ``step`` locate each row."""

    L: np.ndarray
    W: np.ndarray
    V: np.ndarray
    tags: tuple[str, ...]
    ibr: np.ndarray
    step: np.ndarray

    def __post_init__(self):
        r = self.L.shape[0]
        if self.W.shape != (r,) or self.V.shape[0] != r or len(self.tags) != r:
            raise DimensionError("constraint stack rows are inconsistent")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("constraint offsets must be finite")

    @property
    def rows(self) -> int:
        return self.L.shape[0]

    @classmethod
    def empty(cls, n_u: int, n_z: int) -> "ConstraintStack":
        return cls(np.zeros((0, n_u)), np.zeros(0), np.zeros((0, n_z)), (), np.zeros(0, int), np.zeros(0, int))

    def bounds(self, z0, energy_used=None) -> np.ndarray:
        w = self.W + self.V @ np.asarray(z0, dtype=float)
        if energy_used is not None and self.rows:
            mask = np.array([tag == "energy" for tag in self.tags])
            if mask.any():
                w[mask] -= np.asarray(energy_used, dtype=float)[self.ibr[mask]]
        return w

    def select(self, keep) -> "ConstraintStack":
        keep = np.asarray(keep)
        return ConstraintStack(self.L[keep], self.W[keep], self.V[keep],
                               tuple(np.asarray(self.tags, dtype=object)[keep]) if self.rows else (),
                               self.ibr[keep], self.step[keep])


def stack_constraints(*parts: ConstraintStack) -> ConstraintStack:
    parts = [p for p in parts if p is not None]
    return ConstraintStack(
        np.vstack([p.L for p in parts]),
        np.concatenate([p.W for p in parts]),
        np.vstack([p.V for p in parts]),
        tuple(t for p in parts for t in p.tags),
        np.concatenate([p.ibr for p in parts]).astype(int),
        np.concatenate([p.step for p in parts]).astype(int),
    )


class PowerMap(NamedTuple):
    """Stacked linearized IBR power deviations ``P = Bu u + Bz z0`` (time-major)."""

    Bu: np.ndarray
    Bz: np.ndarray
    N: int
    nu: int
    h: float

    def evaluate(self, u, z0) -> np.ndarray:
        return self.Bu @ u + self.Bz @ z0


def build_power_map(part: SusceptancePartition, S, M, N: int, h: float) -> PowerMap:
    """Stack ``P^t = B_IG d_delta^t + B_II u^t`` for ``t = 0..N-1``.

    The state is assumed to start with ``[d_omega; d_delta]``; any further
    (disturbance) states do not enter the IBR power.
    """
    n, nu = part.n_gen, part.n_ibr
    nz = M.shape[1]
    Bx = np.zeros((nu, nz))
    Bx[:, n:2 * n] = part.B_IG
    Bx_N = block_diag(*([Bx] * N))
    Bu_N = block_diag(*([part.B_II] * N))
    S_head = S[:N * nz]
    M_head = M[:N * nz]
    return PowerMap(Bx_N @ S_head + Bu_N, Bx_N @ M_head, N, nu, float(h))


def _step_ibr(N, nu):
    step = np.repeat(np.arange(N), nu)
    ibr = np.tile(np.arange(nu), N)
    return step, ibr


def build_power_constraints(part: SusceptancePartition, S, M, cfg: MipcConfig, p0=None):
    """Lower and upper IBR power rows; infinite limits emit no rows.

    Returns ``(ConstraintStack, PowerMap)``.
    """
    N, nu = cfg.horizon, part.n_ibr
    pmap = build_power_map(part, S, M, N, cfg.control_period)
    p0 = np.zeros(nu) if p0 is None else np.asarray(p0, dtype=float)
    lo = (cfg.per_step(cfg.p_min, nu) - p0).reshape(-1)
    hi = (cfg.per_step(cfg.p_max, nu) - p0).reshape(-1)
    step, ibr = _step_ibr(N, nu)
    lo_rows = np.flatnonzero(np.isfinite(lo))
    hi_rows = np.flatnonzero(np.isfinite(hi))
    stack = ConstraintStack(
        L=np.vstack([-pmap.Bu[lo_rows], pmap.Bu[hi_rows]]),
        W=np.concatenate([-lo[lo_rows], hi[hi_rows]]),
        V=np.vstack([pmap.Bz[lo_rows], -pmap.Bz[hi_rows]]),
        tags=("power-lower",) * lo_rows.size + ("power-upper",) * hi_rows.size,
        ibr=np.concatenate([ibr[lo_rows], ibr[hi_rows]]),
        step=np.concatenate([step[lo_rows], step[hi_rows]]),
    )
    return stack, pmap


def build_energy_rate_constraints(pmap: PowerMap, cfg: MipcConfig) -> ConstraintStack:
    """Rolling-sum energy rows and two-sided rate rows from the stacked power map.

    Energy row ``t`` (one per IBR) bounds ``h * sum_{s<t} P^s`` for prefix
    lengths ``t = 1..N``; rate rows bound ``|P^t - P^{t+1}|``.
    """
    N, nu, h = pmap.N, pmap.nu, pmap.h
    energy = cfg.per_ibr(cfg.energy, nu)
    rate = cfg.per_ibr(cfg.rate, nu)
    nz = pmap.Bz.shape[1]
    parts = [ConstraintStack.empty(N * nu, nz)]

    cum = np.kron(np.tril(np.ones((N, N))), np.eye(nu)) * h
    Le, Ve = cum @ pmap.Bu, -(cum @ pmap.Bz)
    step, ibr = _step_ibr(N, nu)
    rows = np.flatnonzero(np.isfinite(energy[ibr]))
    if rows.size:
        parts.append(ConstraintStack(Le[rows], energy[ibr[rows]], Ve[rows],
                                     ("energy",) * rows.size, ibr[rows], step[rows]))

    if N > 1:
        diff = np.kron(np.eye(N - 1, N) - np.eye(N - 1, N, k=1), np.eye(nu))
        Lr, Vr = diff @ pmap.Bu, -(diff @ pmap.Bz)
        step_r, ibr_r = _step_ibr(N - 1, nu)
        rows = np.flatnonzero(np.isfinite(rate[ibr_r]))
        if rows.size:
            eps = rate[ibr_r[rows]]
            parts.append(ConstraintStack(
                np.vstack([Lr[rows], -Lr[rows]]),
                np.concatenate([eps, eps]),
                np.vstack([Vr[rows], -Vr[rows]]),
                ("rate",) * (2 * rows.size),
                np.concatenate([ibr_r[rows]] * 2),
                np.concatenate([step_r[rows]] * 2),
            ))
    return stack_constraints(*parts)


class StepResult(NamedTuple):
    u: np.ndarray
    u0: np.ndarray
    solution: qp.QpSolution | None
    fallback: bool


def mipc_step(z0, bundle: PredictionBundle, constraints: ConstraintStack | None = None, *,
              energy_used=None, warm_start=None, tol: float = 1e-8) -> StepResult:
    """Solve one receding-horizon problem and return the input sequence.

    Without constraint rows this is the closed-form unconstrained solution.
    An infeasible or unconverged QP falls back to the unconstrained solution
    (the caller clamps the resulting command) and sets ``fallback``.
    """
    z0 = np.asarray(z0, dtype=float)
    f = bundle.F.T @ z0
    if constraints is None or constraints.rows == 0:
        u = -cho_solve(bundle.factor, f)
        return StepResult(u, u[:bundle.nu].copy(), None, False)
    problem = qp.QpProblem(bundle.H, f, constraints.L, constraints.bounds(z0, energy_used))
    sol = qp.solve(problem, tol=tol, warm_start=warm_start, factor=bundle.factor)
    if sol.status != qp.OPTIMAL:
        u = -cho_solve(bundle.factor, f)
        return StepResult(u, u[:bundle.nu].copy(), sol, True)
    return StepResult(sol.u, sol.u[:bundle.nu].copy(), sol, False)


class MipcController:
    """Receding-horizon IBR power controller closing the loop around the plant.

    Measurements are converted to deviation coordinates about the
    equilibrium.  With an observer configuration, the state and a constant
    disturbance are estimated and the disturbance estimate enters the
    predicted free response.
    """

    def __init__(self, net: ReducedNetwork, params: MachineParams, eq: Equilibrium, cfg: MipcConfig,
                 *, observer=None, mask=None, noise=(0.0, 0.0), linearize: str = "equilibrium",
                 model_substeps: int = 1, qp_tol: float = 1e-8):
        from .observer import DisturbanceObserver

        self.net, self.params, self.eq, self.cfg = net, params, eq, cfg
        self.h = cfg.control_period
        if linearize == "equilibrium":
            self.part = dc_partition(net, (eq.delta, eq.u))
        elif linearize == "flat":
            self.part = dc_partition(net)
        else:
            raise ValueError(f"unknown linearization {linearize!r}")
        self.model = build_linear_model(self.part, params, self.h, substeps=model_substeps)
        self.qp_tol = qp_tol
        n, nu = self.model.n, self.model.nu
        Q1, Q2 = cfg.weights(n)

        self.observer = None
        A, B = self.model.A, self.model.Bu
        self._feed = False
        if observer is not None:
            self.observer = DisturbanceObserver(self.model, observer, mask=mask, noise=noise)
            if observer.feed_prediction:
                aug = self.observer.aug
                A, B = aug.A, aug.B
                self._feed = True
        nz = A.shape[0]
        C_cost = np.zeros((n, nz))
        C_cost[:, :n] = np.eye(n)
        self.bundle = build_bundle(A, B, C_cost, cfg.horizon, Q1, Q2, self.h)
        power, self.power_map = build_power_constraints(self.part, self.bundle.S, self.bundle.M, cfg, eq.p_ibr)
        self.constraints = stack_constraints(power, build_energy_rate_constraints(self.power_map, cfg))

        self.p0 = eq.p_ibr.copy()
        self.p_min = cfg.per_ibr(cfg.p_min, nu) if np.ndim(cfg.p_min) < 2 else np.min(cfg.p_min, axis=0)
        self.p_max = cfg.per_ibr(cfg.p_max, nu) if np.ndim(cfg.p_max) < 2 else np.max(cfg.p_max, axis=0)
        self.energy = cfg.per_ibr(cfg.energy, nu)
        self.energy_used = np.zeros(nu)
        self._u_prev = np.zeros(nu)
        self._warm = None
        self._started = False
        self.log: list[dict] = []
        self.telemetry: dict[str, float] = {}

    def _state(self, meas: Measurement) -> tuple[np.ndarray, np.ndarray]:
        x_meas = np.concatenate([meas.omega, meas.delta - self.eq.delta])
        if self.observer is None:
            return x_meas, x_meas
        if not self._started:
            self.observer.reset(x_meas)
        else:
            self.observer.predict(self._u_prev)
        innov = self.observer.update(x_meas)
        z = self.observer.z
        self.telemetry = {f"dhat_{j}": float(v) for j, v in enumerate(self.observer.d_hat_full)}
        self.telemetry["innovation"] = float(np.abs(innov).max(initial=0.0))
        x_hat = z[:self.model.nx]
        return (z if self._feed else x_hat), x_hat

    def __call__(self, meas: Measurement) -> np.ndarray:
        t_start = time.perf_counter()
        z0, x_hat = self._state(meas)
        self._started = True
        res = mipc_step(z0, self.bundle, self.constraints, energy_used=self.energy_used,
                        warm_start=self._warm, tol=self.qp_tol)
        if res.solution is not None and res.solution.ok:
            self._warm = res.solution
        n = self.model.n
        delta_now = meas.delta if self.observer is None else self.eq.delta + x_hat[n:]
        p = ac_power_ibrs(self.net, delta_now, self.eq.u + res.u0).total
        p = np.clip(p, self.p_min, self.p_max)
        room = (self.energy - self.energy_used) / self.h
        p = np.where(p - self.p0 > room, self.p0 + np.maximum(room, 0.0), p)
        self.energy_used = self.energy_used + self.h * (p - self.p0)
        # input the linear model would need to produce the applied power
        self._u_prev = np.linalg.solve(self.part.B_II, (p - self.p0) - self.part.B_IG @ x_hat[n:])
        sol = res.solution
        self.log.append({
            "t": meas.t,
            "iterations": 0 if sol is None else sol.iterations,
            "status": "unconstrained" if sol is None else sol.status,
            "active_rows": [] if sol is None else list(sol.active),
            "fallback": res.fallback,
            "kkt": None if sol is None else sol.residuals.max(),
            "p_cmd": p.tolist(),
            "solve_ms": 1e3 * (time.perf_counter() - t_start),
        })
        return p
