"""Offset-free state and disturbance estimation.

The linear swing model is augmented with a constant disturbance ``d``
entering the speed equations,

    [x; d]+ = [A  Bd; 0  I] [x; d] + [Bu; 0] u,     y = [C  Cd] [x; d],

and estimated by a fixed-gain filter ``z+ = z- + K (y - C z-)``.  ``K`` is
the steady-state Kalman filter gain.  A communication mask restricts ``y``
to the generators that report their state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import null_space, solve_discrete_are

from .errors import DetectabilityError, DimensionError, RiccatiError


@dataclass(frozen=True)
class CommMask:
    """Which generators report measurements, and which channels they send.

    ``channels`` is ``"both"`` (speed and angle) or ``"omega"``.
    """

    generators: tuple[bool, ...]
    channels: str = "both"

    def __post_init__(self):
        gens = tuple(bool(v) for v in self.generators)
        object.__setattr__(self, "generators", gens)
        if not any(gens):
            raise ValueError("at least one generator must be measured")
        if self.channels not in ("both", "omega"):
            raise ValueError(f"unknown measurement channels {self.channels!r}")

    @classmethod
    def full(cls, n: int, channels: str = "both") -> "CommMask":
        return cls((True,) * n, channels)

    @property
    def n(self) -> int:
        return len(self.generators)

    @property
    def measured(self) -> np.ndarray:
        return np.flatnonzero(self.generators)

    @property
    def is_full(self) -> bool:
        return all(self.generators)

    def output_matrix(self, nx: int | None = None) -> np.ndarray:
        """Rows of the identity on ``[omega; delta]`` picked by the mask."""
        n = self.n
        nx = 2 * n if nx is None else nx
        rows = list(self.measured)
        if self.channels == "both":
            rows += [n + i for i in self.measured]
        return np.eye(nx)[rows]

    def select(self, x) -> np.ndarray:
        """Measured entries of a full ``[omega; delta]`` vector."""
        return self.output_matrix(np.size(x)) @ np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    nx: int
    nd: int

    @property
    def nz(self) -> int:
        return self.nx + self.nd

    @property
    def ny(self) -> int:
        return self.C.shape[0]


def unobservable_directions(A, C, tol: float = 1e-9) -> np.ndarray:
    """Basis of unobservable modes with ``|lambda| >= 1`` (PBH test), one per column."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    eig = np.linalg.eigvals(A)
    cand = [1.0 + 0j] + [lam for lam in eig if abs(lam) >= 1.0 - tol]
    seen: list[complex] = []
    dirs = []
    for lam in cand:
        if any(abs(lam - s) < 1e-7 for s in seen):
            continue
        seen.append(lam)
        pbh = np.vstack([lam * np.eye(n) - A, C.astype(complex)])
        ns = null_space(pbh, rcond=1e-10)
        if ns.size:
            dirs.append(ns.real if abs(lam.imag) < 1e-12 else np.hstack([ns.real, ns.imag]))
    if not dirs:
        return np.zeros((n, 0))
    return np.hstack(dirs)


def build_augmented(model, Bd, Cd=None, C=None, *, check: bool = True) -> AugmentedModel:
    """Assemble the disturbance-augmented model and verify detectability.

    ``model`` supplies ``A``, ``Bu`` and (unless ``C`` is given) ``C``.
    Raises :class:`DetectabilityError` naming the unobservable directions.
    """
    A = np.asarray(model.A, dtype=float)
    Bu = np.asarray(model.Bu, dtype=float)
    C = np.asarray(model.C if C is None else C, dtype=float)
    nx = A.shape[0]
    Bd = np.asarray(Bd, dtype=float).reshape(nx, -1)
    nd = Bd.shape[1]
    Cd = np.zeros((C.shape[0], nd)) if Cd is None else np.asarray(Cd, dtype=float).reshape(C.shape[0], nd)
    if C.shape[1] != nx or Bu.shape[0] != nx:
        raise DimensionError("model matrices are inconsistent")
    A_aug = np.block([[A, Bd], [np.zeros((nd, nx)), np.eye(nd)]])
    B_aug = np.vstack([Bu, np.zeros((nd, Bu.shape[1]))])
    C_aug = np.hstack([C, Cd])
    if check:
        dirs = unobservable_directions(A_aug, C_aug)
        if dirs.shape[1]:
            dist = dirs[nx:]
            parts = "disturbance components" if np.abs(dist).max(initial=0) > 1e-9 else "state components"
            raise DetectabilityError(
                f"augmented pair is not detectable: {dirs.shape[1]} unobservable mode(s) "
                f"with |lambda| >= 1, involving {parts}",
                directions=dirs,
            )
    return AugmentedModel(A_aug, B_aug, C_aug, nx, nd)


def riccati_doubling(A, C, Q, R, *, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Prior covariance of the filter Riccati equation by structured doubling.

    Solves ``P = A P A' - A P C' (C P C' + R)^-1 C P A' + Q``; converges
    quadratically for detectable ``(A, C)``.
    """
    A = np.asarray(A, dtype=float)
    Ak = A.T.copy()
    Gk = C.T @ np.linalg.solve(R, C)
    Hk = np.asarray(Q, dtype=float).copy()
    eye = np.eye(A.shape[0])
    for _ in range(max_iter):
        # divergence shows up as overflow; it is caught by the finiteness check
        with np.errstate(over="ignore", invalid="ignore"):
            W = np.linalg.solve(eye + Gk @ Hk, np.hstack([Ak, Gk]))
            WA, WG = W[:, :A.shape[0]], W[:, A.shape[0]:]
            H_next = Hk + Ak.T @ Hk @ WA
            Gk = Gk + Ak @ WG @ Ak.T
            Ak = Ak @ WA
        if not np.all(np.isfinite(H_next)):
            break
        done = np.abs(H_next - Hk).max() <= tol * max(1.0, np.abs(H_next).max())
        Hk = 0.5 * (H_next + H_next.T)
        if done:
            return Hk
    raise RiccatiError(f"Riccati doubling did not converge in {max_iter} iterations")


def compute_gain(aug: AugmentedModel, Qw, Rv, *, max_iter: int = 200) -> np.ndarray:
    """Steady-state Kalman filter gain ``K = P C' (C P C' + R)^-1``.

    ``P`` is the stationary prior covariance.  The estimation error then
    evolves as ``e+ = (I - K C) A e``, which must be Schur stable.
    """
    Qw = np.asarray(Qw, dtype=float)
    Rv = np.asarray(Rv, dtype=float)
    if Qw.shape != (aug.nz, aug.nz) or Rv.shape != (aug.ny, aug.ny):
        raise DimensionError("noise covariances do not match the augmented model")
    if np.min(np.linalg.eigvalsh(Rv)) <= 0:
        raise ValueError("measurement covariance must be positive definite")
    try:
        P = solve_discrete_are(aug.A.T, aug.C.T, Qw, Rv)
    except (np.linalg.LinAlgError, ValueError):
        # the QZ reordering can fail on badly scaled pairs; doubling is slower but robust
        P = riccati_doubling(aug.A, aug.C, Qw, Rv, max_iter=max_iter)
    if not np.all(np.isfinite(P)):
        raise RiccatiError("Riccati solution is not finite")
    S = aug.C @ P @ aug.C.T + Rv
    K = np.linalg.solve(S, aug.C @ P).T
    rho = spectral_radius(aug, K)
    if not rho < 1.0:
        raise RiccatiError(f"estimator error dynamics are not stable (spectral radius {rho:.6g})")
    return K


def error_dynamics(aug: AugmentedModel, K) -> np.ndarray:
    return (np.eye(aug.nz) - K @ aug.C) @ aug.A


def spectral_radius(aug: AugmentedModel, K) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(error_dynamics(aug, K)))))


@dataclass(frozen=True, eq=False)
class ObserverState:
    x_hat: np.ndarray
    d_hat: np.ndarray
    K: np.ndarray
    posterior: bool = True

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x_hat, self.d_hat])

    @property
    def ny(self) -> int:
        return self.K.shape[1]


def predict(obs: ObserverState, aug: AugmentedModel, u) -> ObserverState:
    """Time update; the disturbance estimate is carried unchanged."""
    z = aug.A @ obs.z + aug.B @ np.asarray(u, dtype=float)
    return replace(obs, x_hat=z[:aug.nx], d_hat=z[aug.nx:], posterior=False)


def update(prior: ObserverState, y, aug: AugmentedModel) -> tuple[ObserverState, np.ndarray]:
    """Measurement update; returns the posterior and the innovation."""
    y = np.asarray(y, dtype=float)
    if y.shape != (aug.ny,) or prior.K.shape != (aug.nz, aug.ny):
        raise DimensionError(f"expected {aug.ny} measured channels, got {y.shape}")
    innov = y - aug.C @ prior.z
    z = prior.z + prior.K @ innov
    return replace(prior, x_hat=z[:aug.nx], d_hat=z[aug.nx:], posterior=True), innov


@dataclass(frozen=True)
class ObserverConfig:
    """Observer tuning.

    ``disturbance`` picks the disturbance channels: ``"all"`` (one per
    machine), ``"measured"`` (measured machines only) or ``"auto"`` (all
    with a full mask, measured otherwise).  ``noise_var`` overrides the
    measurement variance taken from the scenario noise levels.
    """

    channels: str = "both"
    q_state: float = 1e-6
    q_dist: float = 1e-2
    noise_var: float | None = None
    r_floor: float = 1e-8
    disturbance: str = "auto"
    feed_prediction: bool = True

    def __post_init__(self):
        if self.disturbance not in ("auto", "all", "measured"):
            raise ValueError(f"unknown disturbance channel choice {self.disturbance!r}")
        if self.q_state < 0 or self.q_dist <= 0 or self.r_floor <= 0:
            raise ValueError("observer covariances must be positive")


class DisturbanceObserver:
    """Fixed-gain observer bound to one linear model and communication mask."""

    def __init__(self, model, cfg: ObserverConfig | None = None, *, mask=None, noise=(0.0, 0.0)):
        cfg = cfg or ObserverConfig()
        n = model.n
        if mask is None:
            mask = CommMask.full(n, cfg.channels)
        elif not isinstance(mask, CommMask):
            mask = CommMask(tuple(mask), cfg.channels)
        if mask.n != n:
            raise DimensionError(f"mask covers {mask.n} generators, model has {n}")
        self.mask, self.cfg, self.model = mask, cfg, model
        choice = cfg.disturbance
        if choice == "auto":
            choice = "all" if mask.is_full else "measured"
        self.dist_machines = np.arange(n) if choice == "all" else mask.measured
        Bd = model.Bd[:, self.dist_machines]
        C = mask.output_matrix(model.nx)
        self.aug = build_augmented(model, Bd, C=C)
        sig_w, sig_d = noise
        if cfg.noise_var is not None:
            var_w = var_d = cfg.noise_var
        else:
            var_w, var_d = sig_w**2, sig_d**2
        nm = mask.measured.size
        r = [var_w] * nm + ([var_d] * nm if mask.channels == "both" else [])
        Rv = np.diag(np.maximum(r, cfg.r_floor))
        Qw = np.diag([cfg.q_state] * model.nx + [cfg.q_dist] * self.aug.nd)
        self.K = compute_gain(self.aug, Qw, Rv)
        self.rho = spectral_radius(self.aug, self.K)
        self.state = ObserverState(np.zeros(model.nx), np.zeros(self.aug.nd), self.K)

    def reset(self, x_meas=None):
        """Start from the measured state (unmeasured entries zero) and ``d = 0``."""
        x0 = np.zeros(self.model.nx)
        if x_meas is not None:
            C = self.mask.output_matrix(self.model.nx)
            x0 = C.T @ (C @ np.asarray(x_meas, dtype=float))
        self.state = ObserverState(x0, np.zeros(self.aug.nd), self.K)

    def predict(self, u):
        self.state = predict(self.state, self.aug, u)

    def update(self, x_meas) -> np.ndarray:
        """Update from a full-length ``[omega; delta]`` vector; only masked entries are used."""
        y = self.mask.select(x_meas)
        self.state, innov = update(self.state, y, self.aug)
        return innov

    @property
    def z(self) -> np.ndarray:
        return self.state.z

    @property
    def d_hat_full(self) -> np.ndarray:
        """Disturbance estimate expanded to one entry per machine."""
        d = np.zeros(self.model.n)
        d[self.dist_machines] = self.state.d_hat
        return d
