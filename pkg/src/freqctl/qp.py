"""Dense primal active-set solver for strictly convex inequality-constrained QPs.

    minimize   1/2 u'Hu + f'u
    subject to L u <= w

Each iteration solves the equality-constrained subproblem on the working set
with a range-space method built on one Cholesky factor of ``H``.  A feasible
starting point comes from the warm-start working set, the unconstrained
minimizer, or a phase-1 LP that minimizes the largest violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import linprog

from .errors import DimensionError, ModelDegeneracyError

OPTIMAL = "optimal"
MAX_ITER = "max-iterations"
INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    L: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        f = np.asarray(self.f, dtype=float).reshape(-1)
        n = f.size
        L = np.asarray(self.L, dtype=float).reshape(-1, n) if np.size(self.L) else np.zeros((0, n))
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if H.shape != (n, n):
            raise DimensionError(f"H must be {n}x{n}, got {H.shape}")
        if L.shape[0] != w.size:
            raise DimensionError("L and w have different row counts")
        if not np.allclose(H, H.T, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise ValueError("H must be symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.f.size

    @property
    def m(self) -> int:
        return self.w.size

    def objective(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.H @ u + self.f @ u)


class KktResiduals(NamedTuple):
    stationarity: float
    feasibility: float
    complementarity: float

    def max(self) -> float:
        return max(self)


@dataclass(eq=False)
class QpSolution:
    u: np.ndarray
    lam: np.ndarray
    status: str
    residuals: KktResiduals
    iterations: int
    active: tuple[int, ...] = ()
    certificate: tuple[int, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def check_kkt(p: QpProblem, u, lam) -> KktResiduals:
    """Infinity-norm residuals of stationarity, primal feasibility and complementarity.

    Negative multipliers count toward the complementarity residual.
    """
    u = np.asarray(u, dtype=float)
    lam = np.asarray(lam, dtype=float)
    grad = p.H @ u + p.f
    if p.m:
        grad = grad + p.L.T @ lam
        slack = p.L @ u - p.w
        feas = float(max(0.0, slack.max()))
        comp = float(max(np.abs(lam * slack).max(), max(0.0, -lam.min())))
    else:
        feas = comp = 0.0
    return KktResiduals(float(np.abs(grad).max(initial=0.0)), feas, comp)


class _Factor:
    """Cholesky factor ``H = R'R`` plus helpers for range-space solves."""

    def __init__(self, H, factor=None):
        if factor is None:
            try:
                factor = cho_factor(H, lower=False)
            except np.linalg.LinAlgError as exc:
                raise ModelDegeneracyError("QP Hessian is not positive definite") from exc
        self.cf = factor
        self.R = np.triu(factor[0]) if not factor[1] else np.triu(factor[0].T)

    def solve(self, rhs):
        return cho_solve(self.cf, rhs)

    def rt_solve(self, rhs):
        """Solve ``R' y = rhs``."""
        return solve_triangular(self.R, rhs, trans="T", lower=False)


def _eqp(fac: _Factor, f, A, b):
    """Minimize 1/2 x'Hx + f'x subject to A x = b.  Returns (x, lam, rank_ok)."""
    x_unc = -fac.solve(f)
    if A.shape[0] == 0:
        return x_unc, np.zeros(0), True
    Y = fac.rt_solve(A.T)  # H^-1 = R^-1 R^-T, so A H^-1 A' = Y'Y
    Q, Rq = np.linalg.qr(Y)
    diag = np.abs(np.diag(Rq))
    if diag.min() <= 1e-11 * max(1.0, diag.max()):
        return x_unc, np.zeros(A.shape[0]), False
    rhs = A @ x_unc - b  # (A H^-1 A') lam = A x_unc - b
    z = solve_triangular(Rq, rhs, trans="T", lower=False)
    lam = solve_triangular(Rq, z, lower=False)
    x = x_unc - fac.solve(A.T @ lam)
    return x, lam, True


def _phase_one(p: QpProblem):
    """Least-max-violation point via LP.  Returns (u, violation, certificate rows)."""
    n, m = p.n, p.m
    scale = np.maximum(1.0, np.abs(p.L).max(axis=1))
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A = np.hstack([p.L / scale[:, None], -np.ones((m, 1))])
    bounds = [(None, None)] * n + [(0.0, None)]
    res = linprog(c, A_ub=A, b_ub=p.w / scale, bounds=bounds, method="highs")
    if res.status != 0:
        return None, np.inf, tuple(range(m))
    u = res.x[:n]
    duals = np.asarray(res.ineqlin.marginals)
    cert = tuple(int(i) for i in np.flatnonzero(duals < -1e-9))
    return u, float(res.x[-1]), cert


def solve(
    p: QpProblem,
    tol: float = 1e-8,
    max_iter: int | None = None,
    *,
    warm_start=None,
    factor=None,
) -> QpSolution:
    """Solve ``p`` to KKT tolerance ``tol``.

    ``warm_start`` is a previous :class:`QpSolution` or an iterable of row
    indices used as the initial working set.  ``factor`` may carry a cached
    ``scipy.linalg.cho_factor`` of ``H``.
    """
    n, m = p.n, p.m
    if max_iter is None:
        max_iter = 10 * (n + m)
    fac = _Factor(p.H, factor)

    def finish(u, lam, status, iters, work, cert=()):
        return QpSolution(
            u=u, lam=lam, status=status, residuals=check_kkt(p, u, lam),
            iterations=iters, active=tuple(sorted(work)), certificate=tuple(cert),
        )

    if m == 0:
        u = -fac.solve(p.f)
        return finish(u, np.zeros(0), OPTIMAL, 1, [])

    feas_tol = tol
    u = None
    work: list[int] = []
    if warm_start is not None:
        rows = warm_start.active if isinstance(warm_start, QpSolution) else tuple(warm_start)
        rows = [int(i) for i in rows if 0 <= int(i) < m]
        # greedily keep a linearly independent subset
        kept: list[int] = []
        for i in rows:
            trial = kept + [i]
            if np.linalg.matrix_rank(p.L[trial], tol=1e-10) == len(trial):
                kept = trial
        x, _, ok = _eqp(fac, p.f, p.L[kept], p.w[kept])
        if ok and np.all(p.L @ x <= p.w + feas_tol):
            u, work = x, kept
    if u is None:
        x = -fac.solve(p.f)
        if np.all(p.L @ x <= p.w + feas_tol):
            u = x
        else:
            u0, viol, cert = _phase_one(p)
            if u0 is None or viol > feas_tol:
                best = u0 if u0 is not None else x
                return finish(best, np.zeros(m), INFEASIBLE, 0, [], cert)
            u = u0

    lam_full = np.zeros(m)
    for it in range(1, max_iter + 1):
        A = p.L[work]
        x, lam, ok = _eqp(fac, p.f, A, p.w[work])
        if not ok:
            # dependent working set: drop the newest row
            work.pop()
            continue
        step = x - u
        if np.abs(step).max(initial=0.0) <= 1e-12 * (1.0 + np.abs(u).max(initial=0.0)):
            u = x
            if lam.size == 0 or lam.min() >= -tol:
                lam_full = np.zeros(m)
                lam_full[work] = np.maximum(lam, 0.0)
                return finish(u, lam_full, OPTIMAL, it, work)
            j = int(np.argmin(lam))
            work.pop(j)
            continue
        Lp = p.L @ step
        slack = p.w - p.L @ u
        alpha, block = 1.0, -1
        in_work = np.zeros(m, dtype=bool)
        in_work[work] = True
        cand = np.flatnonzero((Lp > 1e-14 * (1.0 + np.abs(p.L).max())) & ~in_work)
        if cand.size:
            ratios = np.maximum(slack[cand], 0.0) / Lp[cand]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                alpha, block = float(ratios[k]), int(cand[k])
        u = u + alpha * step
        if block >= 0:
            work.append(block)

    lam_full = np.zeros(m)
    if work:
        _, lam, ok = _eqp(fac, p.f, p.L[work], p.w[work])
        if ok:
            lam_full[work] = np.maximum(lam, 0.0)
    return finish(u, lam_full, MAX_ITER, max_iter, work)


def dump_problem(p: QpProblem, path) -> None:
    """Write ``(H, f, L, w)`` as labelled text blocks (see :func:`read_matrices`)."""
    write_matrices(path, {"H": p.H, "f": p.f[:, None], "L": p.L, "w": p.w[:, None]})


def load_problem(path) -> QpProblem:
    mats = read_matrices(path)
    return QpProblem(mats["H"], mats["f"].ravel(), mats["L"], mats["w"].ravel())


def write_matrices(path, mats: dict) -> None:
    """Text matrix format: ``# name <rows> <cols>`` header, then whitespace rows."""
    lines = []
    for name, arr in mats.items():
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        lines.append(f"# {name} {arr.shape[0]} {arr.shape[1]}")
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in arr)
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrices(path) -> dict:
    mats = {}
    lines = Path(path).read_text().splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if not line.startswith("#"):
            raise ValueError(f"{path}:{i}: expected a '# name rows cols' header")
        name, r, c = line[1:].split()
        r, c = int(r), int(c)
        rows = [np.array(lines[i + k].split(), dtype=float) for k in range(r)]
        i += r
        mats[name] = np.array(rows).reshape(r, c)
    return mats
